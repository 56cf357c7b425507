//! Accuracy and diversity metrics over flow fields and flow distributions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowField;

/// Ordered flow predictions from a single source image.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowDistribution {
    members: Vec<FlowField>,
}

impl FlowDistribution {
    pub fn new(members: Vec<FlowField>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::invalid("flow distribution needs at least one member"))?;
        if let Some(i) = members.iter().position(|m| m.dims() != first.dims()) {
            return Err(Error::invalid(format!(
                "member {i} is {:?}, member 0 is {:?}",
                members[i].dims(),
                first.dims()
            )));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[FlowField] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn source_dims(&self) -> (usize, usize) {
        self.members[0].dims()
    }

    fn check_gt(&self, gt: &FlowField) -> Result<()> {
        self.members[0].check_same_dims(gt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpeMap {
    pub height: usize,
    pub width: usize,
    /// Per-pixel end-point error; NaN where either field is invalid.
    pub values: Vec<f64>,
    pub mean: f64,
    pub evaluated: usize,
}

pub fn epe_map(pred: &FlowField, gt: &FlowField) -> Result<EpeMap> {
    pred.check_same_dims(gt)?;
    let mut values = Vec::with_capacity(pred.len());
    let mut sum = 0.0;
    let mut evaluated = 0;
    for k in 0..pred.len() {
        if pred.valid()[k] && gt.valid()[k] {
            let e = (gt.u()[k] - pred.u()[k]).hypot(gt.v()[k] - pred.v()[k]);
            sum += e;
            evaluated += 1;
            values.push(e);
        } else {
            values.push(f64::NAN);
        }
    }
    if evaluated == 0 {
        return Err(Error::EmptyDomain("no pixel is valid in both flows".into()));
    }
    Ok(EpeMap {
        height: pred.height(),
        width: pred.width(),
        values,
        mean: sum / evaluated as f64,
        evaluated,
    })
}

/// Mean over members of the per-member mean EPE.
pub fn epe_avg(dist: &FlowDistribution, gt: &FlowField) -> Result<f64> {
    dist.check_gt(gt)?;
    let mut total = 0.0;
    for m in dist.members() {
        total += epe_map(m, gt)?.mean;
    }
    Ok(total / dist.len() as f64)
}

/// Vectors shorter than this have no direction.
pub const MIN_MAGNITUDE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularError {
    pub mean_deg: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

pub fn angular_error(pred: &FlowField, gt: &FlowField) -> Result<AngularError> {
    pred.check_same_dims(gt)?;
    let mut sum = 0.0;
    let mut evaluated = 0;
    let mut skipped = 0;
    for k in 0..pred.len() {
        if !(pred.valid()[k] && gt.valid()[k]) {
            continue;
        }
        let (pu, pv, gu, gv) = (pred.u()[k], pred.v()[k], gt.u()[k], gt.v()[k]);
        let (pm, gm) = (pu.hypot(pv), gu.hypot(gv));
        if pm <= MIN_MAGNITUDE || gm <= MIN_MAGNITUDE {
            skipped += 1;
            continue;
        }
        let cos = ((pu * gu + pv * gv) / (pm * gm)).clamp(-1.0, 1.0);
        sum += cos.acos().to_degrees();
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(Error::EmptyDomain(
            "no pixel has both vectors above the magnitude gate".into(),
        ));
    }
    Ok(AngularError {
        mean_deg: sum / evaluated as f64,
        evaluated,
        skipped,
    })
}

/// Outlier percentages. `bg`/`fg` are present only when a mask was given and
/// the corresponding region holds at least one valid pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1Scores {
    pub all: f64,
    pub bg: Option<f64>,
    pub fg: Option<f64>,
}

/// A pixel is an outlier when its EPE exceeds both 3 px and 5% of the
/// ground-truth magnitude.
pub fn is_outlier(epe: f64, gt_magnitude: f64) -> bool {
    epe > 3.0 && epe > 0.05 * gt_magnitude
}

pub fn f1_outliers(pred: &FlowField, gt: &FlowField, fg_mask: Option<&[bool]>) -> Result<F1Scores> {
    pred.check_same_dims(gt)?;
    if let Some(mask) = fg_mask {
        if mask.len() != pred.len() {
            return Err(Error::invalid(format!(
                "foreground mask has {} entries, flow {}",
                mask.len(),
                pred.len()
            )));
        }
    }
    // [all, bg, fg] x (outliers, total)
    let mut counts = [(0usize, 0usize); 3];
    for k in 0..pred.len() {
        if !(pred.valid()[k] && gt.valid()[k]) {
            continue;
        }
        let epe = (gt.u()[k] - pred.u()[k]).hypot(gt.v()[k] - pred.v()[k]);
        let out = is_outlier(epe, gt.u()[k].hypot(gt.v()[k])) as usize;
        counts[0].0 += out;
        counts[0].1 += 1;
        if let Some(mask) = fg_mask {
            let region = if mask[k] { 2 } else { 1 };
            counts[region].0 += out;
            counts[region].1 += 1;
        }
    }
    if counts[0].1 == 0 {
        return Err(Error::EmptyDomain("no pixel is valid in both flows".into()));
    }
    let pct = |(o, n): (usize, usize)| (n > 0).then(|| 100.0 * o as f64 / n as f64);
    Ok(F1Scores {
        all: pct(counts[0]).unwrap(),
        bg: fg_mask.and(pct(counts[1])),
        fg: fg_mask.and(pct(counts[2])),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyConfig {
    pub grid_h: usize,
    pub grid_w: usize,
    /// Symmetric clip bound in pixels; `None` takes the largest absolute
    /// component found in the distribution.
    #[serde(default)]
    pub range: Option<f64>,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        Self {
            grid_h: 16,
            grid_w: 16,
            range: None,
        }
    }
}

fn bin(value: f64, range: f64, bins: usize) -> usize {
    if range <= 0.0 {
        return bins / 2;
    }
    let clipped = value.clamp(-range, range);
    let idx = ((clipped + range) / (2.0 * range) * bins as f64).floor() as usize;
    idx.min(bins - 1)
}

/// Normalised per-pixel entropy of the binned member vectors, averaged over
/// pixels with at least one valid member. `u` indexes grid columns (`grid_w`),
/// `v` grid rows (`grid_h`).
pub fn flow_entropy(dist: &FlowDistribution, cfg: &EntropyConfig) -> Result<f64> {
    let cells = cfg.grid_h * cfg.grid_w;
    if cells < 2 {
        return Err(Error::invalid(
            "entropy grid needs at least two cells (normaliser log(h*w) is zero)",
        ));
    }
    let range = match cfg.range {
        Some(r) if !(r > 0.0) || !r.is_finite() => {
            return Err(Error::invalid(format!("entropy range must be > 0, got {r}")))
        }
        Some(r) => r,
        None => dist
            .members()
            .iter()
            .flat_map(|m| {
                (0..m.len())
                    .filter(|&k| m.valid()[k])
                    .map(move |k| m.u()[k].abs().max(m.v()[k].abs()))
            })
            .fold(0.0, f64::max),
    };
    let norm = (cells as f64).ln();
    let pixels = dist.members()[0].len();
    let mut hist = vec![0usize; cells];
    let mut total = 0.0;
    let mut evaluated = 0usize;
    for k in 0..pixels {
        hist.iter_mut().for_each(|c| *c = 0);
        let mut n = 0usize;
        for m in dist.members() {
            if !m.valid()[k] {
                continue;
            }
            let col = bin(m.u()[k], range, cfg.grid_w);
            let row = bin(m.v()[k], range, cfg.grid_h);
            hist[row * cfg.grid_w + col] += 1;
            n += 1;
        }
        if n == 0 {
            continue;
        }
        let h: f64 = hist
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n as f64;
                -p * p.ln()
            })
            .sum();
        total += h / norm;
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(Error::EmptyDomain("no pixel has a valid member".into()));
    }
    Ok((total / evaluated as f64).clamp(0.0, 1.0))
}

/// Direction histogram: sector `k` covers `[2 pi k / S, 2 pi (k + 1) / S)` of
/// `atan2(v, u)` mapped into `[0, 2 pi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarHistogram {
    pub counts: Vec<usize>,
    pub mean_magnitude: Vec<f64>,
    /// Invalid or zero-magnitude vectors left out of `counts`.
    pub skipped: usize,
    #[serde(skip)]
    magnitude_sums: Vec<f64>,
}

impl PolarHistogram {
    pub fn new(sectors: usize) -> Result<Self> {
        if sectors < 2 {
            return Err(Error::invalid("polar histogram needs at least two sectors"));
        }
        Ok(Self {
            counts: vec![0; sectors],
            mean_magnitude: vec![0.0; sectors],
            skipped: 0,
            magnitude_sums: vec![0.0; sectors],
        })
    }

    pub fn sectors(&self) -> usize {
        self.counts.len()
    }

    pub fn sector_of(&self, u: f64, v: f64) -> usize {
        let s = self.sectors();
        let mut theta = v.atan2(u);
        if theta < 0.0 {
            theta += std::f64::consts::TAU;
        }
        ((theta / (std::f64::consts::TAU / s as f64)).floor() as usize).min(s - 1)
    }

    pub fn add_flow(&mut self, flow: &FlowField) {
        for k in 0..flow.len() {
            let (u, v) = (flow.u()[k], flow.v()[k]);
            let mag = u.hypot(v);
            if !flow.valid()[k] || !mag.is_finite() || mag < MIN_MAGNITUDE {
                self.skipped += 1;
                continue;
            }
            let s = self.sector_of(u, v);
            self.counts[s] += 1;
            self.magnitude_sums[s] += mag;
        }
        for s in 0..self.sectors() {
            self.mean_magnitude[s] = if self.counts[s] > 0 {
                self.magnitude_sums[s] / self.counts[s] as f64
            } else {
                0.0
            };
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn polar_histogram(flow: &FlowField, sectors: usize) -> Result<PolarHistogram> {
    let mut h = PolarHistogram::new(sectors)?;
    h.add_flow(flow);
    Ok(h)
}

/// Per pixel, the member closest to `gt` (lowest index on ties). Pixels where
/// `gt` or every member is invalid come out invalid.
pub fn best_per_pixel(dist: &FlowDistribution, gt: &FlowField) -> Result<FlowField> {
    dist.check_gt(gt)?;
    let n = gt.len();
    let (mut u, mut v, mut valid) = (vec![0.0; n], vec![0.0; n], vec![false; n]);
    for k in 0..n {
        if !gt.valid()[k] {
            continue;
        }
        let mut best = f64::INFINITY;
        for m in dist.members() {
            if !m.valid()[k] {
                continue;
            }
            let e = (gt.u()[k] - m.u()[k]).hypot(gt.v()[k] - m.v()[k]);
            if e < best {
                best = e;
                u[k] = m.u()[k];
                v[k] = m.v()[k];
                valid[k] = true;
            }
        }
    }
    FlowField::new(gt.height(), gt.width(), u, v, valid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct PixelCounts {
    pub evaluated: usize,
    pub skipped: usize,
}

/// Aggregate metrics for one distribution. Accuracy fields are `None` without
/// ground truth; AE and F1 are member means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub epe_mean: Option<f64>,
    pub ae_mean_deg: Option<f64>,
    pub f1_all_pct: Option<f64>,
    pub f1_bg_pct: Option<f64>,
    pub f1_fg_pct: Option<f64>,
    pub entropy: f64,
    pub n_members: usize,
    pub pixel_counts: PixelCounts,
}

impl MetricReport {
    pub fn compute(
        dist: &FlowDistribution,
        gt: Option<&FlowField>,
        fg_mask: Option<&[bool]>,
        entropy: &EntropyConfig,
    ) -> Result<Self> {
        let entropy = flow_entropy(dist, entropy)?;
        let mut report = MetricReport {
            epe_mean: None,
            ae_mean_deg: None,
            f1_all_pct: None,
            f1_bg_pct: None,
            f1_fg_pct: None,
            entropy,
            n_members: dist.len(),
            pixel_counts: PixelCounts::default(),
        };
        let Some(gt) = gt else {
            return Ok(report);
        };
        report.epe_mean = Some(epe_avg(dist, gt)?);

        let mut ae_sum = 0.0;
        let mut ae_members = 0usize;
        let (mut f1_all, mut f1_bg, mut f1_fg) = (0.0, Mean::default(), Mean::default());
        for m in dist.members() {
            match angular_error(m, gt) {
                Ok(ae) => {
                    ae_sum += ae.mean_deg;
                    ae_members += 1;
                    report.pixel_counts.evaluated += ae.evaluated;
                    report.pixel_counts.skipped += ae.skipped;
                }
                Err(Error::EmptyDomain(_)) => {
                    let both_valid = (0..m.len())
                        .filter(|&k| m.valid()[k] && gt.valid()[k])
                        .count();
                    report.pixel_counts.skipped += both_valid;
                }
                Err(e) => return Err(e),
            }
            let f1 = f1_outliers(m, gt, fg_mask)?;
            f1_all += f1.all;
            f1_bg.push(f1.bg);
            f1_fg.push(f1.fg);
        }
        report.ae_mean_deg = (ae_members > 0).then(|| ae_sum / ae_members as f64);
        report.f1_all_pct = Some(f1_all / dist.len() as f64);
        report.f1_bg_pct = f1_bg.value();
        report.f1_fg_pct = f1_fg.value();
        Ok(report)
    }
}

#[derive(Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn push(&mut self, x: Option<f64>) {
        if let Some(x) = x {
            self.sum += x;
            self.n += 1;
        }
    }

    fn value(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}
