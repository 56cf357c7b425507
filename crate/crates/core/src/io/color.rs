//! Middlebury colour-wheel rendering of flow fields.

use crate::flow::FlowField;
use crate::image::ImagePlane;

const RY: usize = 15;
const YG: usize = 6;
const GC: usize = 4;
const CB: usize = 11;
const BM: usize = 13;
const MR: usize = 6;
pub const WHEEL_SIZE: usize = RY + YG + GC + CB + BM + MR;

/// The 55-entry hue wheel, RGB in `[0, 1]`.
pub fn color_wheel() -> Vec<[f64; 3]> {
    let mut wheel = Vec::with_capacity(WHEEL_SIZE);
    let ramp = |i: usize, n: usize| (255 * i / n) as f64 / 255.0;
    for i in 0..RY {
        wheel.push([1.0, ramp(i, RY), 0.0]);
    }
    for i in 0..YG {
        wheel.push([1.0 - ramp(i, YG), 1.0, 0.0]);
    }
    for i in 0..GC {
        wheel.push([0.0, 1.0, ramp(i, GC)]);
    }
    for i in 0..CB {
        wheel.push([0.0, 1.0 - ramp(i, CB), 1.0]);
    }
    for i in 0..BM {
        wheel.push([ramp(i, BM), 0.0, 1.0]);
    }
    for i in 0..MR {
        wheel.push([1.0, 0.0, 1.0 - ramp(i, MR)]);
    }
    wheel
}

/// Colour of one vector at normalised radius `rad` (clipped to 1).
pub fn flow_color(wheel: &[[f64; 3]], u: f64, v: f64, rad: f64) -> [f64; 3] {
    let n = wheel.len();
    let angle = (-v).atan2(-u) / std::f64::consts::PI;
    // scaling by n (not n - 1) lets the last bin blend back into bin 0, so the
    // map has no jump where the angle wraps
    let fk = (angle + 1.0) / 2.0 * n as f64;
    let k0 = (fk.floor() as usize).min(n - 1);
    let k1 = (k0 + 1) % n;
    let f = fk - k0 as f64;
    let rad = rad.clamp(0.0, 1.0);
    let mut out = [0.0; 3];
    for c in 0..3 {
        let col = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
        out[c] = 1.0 - rad * (1.0 - col);
    }
    out
}

/// Renders `flow` as an RGB image. Saturation grows linearly with
/// `|flow| / max_mag` up to 1; zero flow is white, invalid pixels black.
/// Without `max_mag` the 99th-percentile valid magnitude is used.
pub fn flow_to_color(flow: &FlowField, max_mag: Option<f64>) -> ImagePlane {
    let wheel = color_wheel();
    let scale = max_mag
        .filter(|m| *m > 0.0 && m.is_finite())
        .unwrap_or_else(|| percentile_magnitude(flow, 0.99));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut px = Vec::with_capacity(flow.len() * 3);
    for k in 0..flow.len() {
        if !flow.valid()[k] {
            px.extend_from_slice(&[0.0; 3]);
            continue;
        }
        let (u, v) = (flow.u()[k], flow.v()[k]);
        let rad = u.hypot(v) / scale;
        px.extend_from_slice(&flow_color(&wheel, u, v, rad));
    }
    ImagePlane::from_clipped(flow.height(), flow.width(), 3, px)
        .expect("dimensions come from a valid flow field")
}

fn percentile_magnitude(flow: &FlowField, q: f64) -> f64 {
    let mut mags: Vec<f64> = (0..flow.len())
        .filter(|&k| flow.valid()[k])
        .map(|k| flow.u()[k].hypot(flow.v()[k]))
        .collect();
    if mags.is_empty() {
        return 0.0;
    }
    mags.sort_by(f64::total_cmp);
    let idx = ((mags.len() - 1) as f64 * q).round() as usize;
    mags[idx]
}
