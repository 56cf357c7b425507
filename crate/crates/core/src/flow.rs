//! Dense flow fields and estimators.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::metrics::FlowDistribution;

/// Per-pixel displacement `(u, v)` in pixels from frame 1 to frame 2, `+u`
/// rightward and `+v` downward, with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    u: Vec<f64>,
    v: Vec<f64>,
    valid: Vec<bool>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, u: Vec<f64>, v: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        let n = height * width;
        if height == 0 || width == 0 {
            return Err(Error::invalid("flow dimensions must be positive"));
        }
        if u.len() != n || v.len() != n || valid.len() != n {
            return Err(Error::invalid(format!(
                "{height}x{width} flow needs {n} entries per channel"
            )));
        }
        for k in 0..n {
            if valid[k] && !(u[k].is_finite() && v[k].is_finite()) {
                return Err(Error::invalid(format!(
                    "valid flow pixel {k} has non-finite components"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            u,
            v,
            valid,
        })
    }

    /// All-valid field.
    pub fn from_components(height: usize, width: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        Self::new(height, width, u, v, vec![true; height * width])
    }

    pub fn constant(height: usize, width: usize, u: f64, v: f64) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            u: vec![u; n],
            v: vec![v; n],
            valid: vec![true; n],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> (f64, f64)) -> Result<Self> {
        let mut u = Vec::with_capacity(height * width);
        let mut v = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(y, x);
                u.push(a);
                v.push(b);
            }
        }
        Self::from_components(height, width, u, v)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        let k = y * self.width + x;
        (self.u[k], self.v[k])
    }

    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub(crate) fn check_same_dims(&self, other: &FlowField) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::invalid(format!(
                "flow dimensions differ: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }
}

/// Estimates dense flow from `x0` to `x1`. Output dims equal input dims.
pub trait FlowEstimator: Send + Sync {
    fn estimate(&self, x0: &ImagePlane, x1: &ImagePlane) -> Result<FlowField>;
}

impl<E: FlowEstimator + ?Sized> FlowEstimator for &E {
    fn estimate(&self, x0: &ImagePlane, x1: &ImagePlane) -> Result<FlowField> {
        (**self).estimate(x0, x1)
    }
}

impl<E: FlowEstimator + ?Sized> FlowEstimator for Box<E> {
    fn estimate(&self, x0: &ImagePlane, x1: &ImagePlane) -> Result<FlowField> {
        (**self).estimate(x0, x1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MatchCost {
    Sad,
    #[default]
    Ssd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockMatchParams {
    #[serde(default = "default_patch_radius")]
    pub patch_radius: usize,
    #[serde(default = "default_search_radius")]
    pub search_radius: usize,
    #[serde(default)]
    pub cost: MatchCost,
}

fn default_patch_radius() -> usize {
    3
}

fn default_search_radius() -> usize {
    8
}

impl Default for BlockMatchParams {
    fn default() -> Self {
        Self {
            patch_radius: default_patch_radius(),
            search_radius: default_search_radius(),
            cost: MatchCost::default(),
        }
    }
}

/// Exhaustive integer block matching.
///
/// For each pixel every displacement within `search_radius` whose target
/// centre lies inside the frame is scored by the mean patch cost over the
/// patch offsets that fall inside both frames. The minimum wins; ties go to
/// the smaller `u^2 + v^2`, then to row-major order of `(v, u)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct BlockMatcher {
    params: BlockMatchParams,
}

impl BlockMatcher {
    pub fn new(params: BlockMatchParams) -> Result<Self> {
        if params.patch_radius == 0 || params.search_radius == 0 {
            return Err(Error::invalid("block-matching radii must be >= 1"));
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &BlockMatchParams {
        &self.params
    }

    /// Candidate displacements `(dv, du)` in tie-break order.
    fn ordered_candidates(&self) -> Vec<(isize, isize)> {
        let s = self.params.search_radius as isize;
        let mut out: Vec<(isize, isize)> = (-s..=s)
            .flat_map(|dy| (-s..=s).map(move |dx| (dy, dx)))
            .collect();
        // stable sort keeps the row-major order among equal magnitudes
        out.sort_by_key(|&(dy, dx)| dy * dy + dx * dx);
        out
    }
}

impl FlowEstimator for BlockMatcher {
    fn estimate(&self, x0: &ImagePlane, x1: &ImagePlane) -> Result<FlowField> {
        block_matching_flow(x0, x1, &self.params)
    }
}

pub fn block_matching_flow(x0: &ImagePlane, x1: &ImagePlane, params: &BlockMatchParams) -> Result<FlowField> {
    let matcher = BlockMatcher::new(*params)?;
    if x0.dims() != x1.dims() {
        return Err(Error::invalid(format!(
            "image dimensions differ: {:?} vs {:?}",
            x0.dims(),
            x1.dims()
        )));
    }
    let (h, w, c) = x0.dims();
    let side = 2 * params.patch_radius + 1;
    if h < side || w < side {
        return Err(Error::invalid(format!(
            "{h}x{w} images are smaller than a {side}x{side} patch"
        )));
    }
    let candidates = matcher.ordered_candidates();
    let r = params.patch_radius as isize;
    let (hi, wi) = (h as isize, w as isize);
    let a = x0.pixels();
    let b = x1.pixels();

    let rows: Vec<Vec<(f64, f64)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let y = y as isize;
            (0..wi)
                .map(|x| {
                    let mut best = (0isize, 0isize);
                    let mut best_cost = f64::INFINITY;
                    for &(dy, dx) in &candidates {
                        let (ty, tx) = (y + dy, x + dx);
                        if ty < 0 || ty >= hi || tx < 0 || tx >= wi {
                            continue;
                        }
                        let mut sum = 0.0;
                        let mut count = 0usize;
                        for oy in -r..=r {
                            let (py, qy) = (y + oy, ty + oy);
                            if py < 0 || py >= hi || qy < 0 || qy >= hi {
                                continue;
                            }
                            for ox in -r..=r {
                                let (px, qx) = (x + ox, tx + ox);
                                if px < 0 || px >= wi || qx < 0 || qx >= wi {
                                    continue;
                                }
                                let pa = ((py * wi + px) as usize) * c;
                                let pb = ((qy * wi + qx) as usize) * c;
                                for ch in 0..c {
                                    let d = a[pa + ch] - b[pb + ch];
                                    sum += match params.cost {
                                        MatchCost::Sad => d.abs(),
                                        MatchCost::Ssd => d * d,
                                    };
                                }
                                count += 1;
                            }
                        }
                        let cost = sum / count as f64;
                        if cost < best_cost {
                            best_cost = cost;
                            best = (dy, dx);
                        }
                    }
                    (best.1 as f64, best.0 as f64)
                })
                .collect()
        })
        .collect();

    let mut u = Vec::with_capacity(h * w);
    let mut v = Vec::with_capacity(h * w);
    for row in rows {
        for (du, dv) in row {
            u.push(du);
            v.push(dv);
        }
    }
    FlowField::from_components(h, w, u, v)
}

/// Runs `est(x0, x_i)` for every frame, preserving order.
pub fn estimate_distribution<E: FlowEstimator + ?Sized>(
    x0: &ImagePlane,
    frames: &[ImagePlane],
    est: &E,
) -> Result<FlowDistribution> {
    if frames.is_empty() {
        return Err(Error::invalid("flow distribution needs at least one frame"));
    }
    if let Some(i) = frames.iter().position(|f| f.dims() != x0.dims()) {
        return Err(Error::invalid(format!(
            "frame {i} is {:?}, source is {:?}",
            frames[i].dims(),
            x0.dims()
        )));
    }
    let members = frames
        .par_iter()
        .enumerate()
        .map(|(i, frame)| {
            let flow = est.estimate(x0, frame).map_err(|e| e.in_phase("flow", Some(i)))?;
            if flow.dims() != (x0.height(), x0.width()) {
                return Err(Error::invalid(format!(
                    "estimator returned {:?} flow for {:?} images",
                    flow.dims(),
                    (x0.height(), x0.width())
                ))
                .in_phase("flow", Some(i)));
            }
            Ok(flow)
        })
        .collect::<Result<Vec<_>>>()?;
    FlowDistribution::new(members)
}
