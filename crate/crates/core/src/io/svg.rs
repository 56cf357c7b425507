//! SVG rendering of polar direction histograms.
//!
//! Wedge length is proportional to the sector count (the fullest sector
//! reaches the outer radius); fill encodes the sector's mean magnitude through
//! a five-stop viridis ramp normalised by the largest mean magnitude. Angles
//! follow image coordinates, so `+v` (downward flow) points down.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::PolarHistogram;

const SIZE: f64 = 400.0;
const CENTER: f64 = 180.0;
const MAX_RADIUS: f64 = 150.0;

const VIRIDIS: [[u8; 3]; 5] = [
    [68, 1, 84],
    [59, 82, 139],
    [33, 145, 140],
    [94, 201, 98],
    [253, 231, 37],
];

/// Maps `t` in `[0, 1]` through the viridis stops.
pub fn magnitude_color(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let pos = t * (VIRIDIS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(VIRIDIS.len() - 2);
    let f = pos - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        let a = VIRIDIS[i][c] as f64;
        let b = VIRIDIS[i + 1][c] as f64;
        out[c] = (a + f * (b - a)).round() as u8;
    }
    out
}

fn hex([r, g, b]: [u8; 3]) -> String {
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Radius of each wedge in SVG units.
pub fn wedge_radii(h: &PolarHistogram) -> Vec<f64> {
    let max = h.counts.iter().copied().max().unwrap_or(0);
    h.counts
        .iter()
        .map(|&c| {
            if max == 0 {
                0.0
            } else {
                MAX_RADIUS * c as f64 / max as f64
            }
        })
        .collect()
}

pub fn polar_svg(h: &PolarHistogram) -> String {
    let s = h.sectors();
    let radii = wedge_radii(h);
    let max_mag = h.mean_magnitude.iter().copied().fold(0.0, f64::max);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r##"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"##
    );
    let _ = writeln!(
        svg,
        r##"<circle cx="{CENTER}" cy="{CENTER}" r="{MAX_RADIUS}" fill="none" stroke="#bbbbbb" stroke-width="1"/>"##
    );
    let step = std::f64::consts::TAU / s as f64;
    for k in 0..s {
        let r = radii[k];
        let (a0, a1) = (k as f64 * step, (k + 1) as f64 * step);
        let (x0, y0) = (CENTER + r * a0.cos(), CENTER + r * a0.sin());
        let (x1, y1) = (CENTER + r * a1.cos(), CENTER + r * a1.sin());
        let large = if step > std::f64::consts::PI { 1 } else { 0 };
        let t = if max_mag > 0.0 {
            h.mean_magnitude[k] / max_mag
        } else {
            0.0
        };
        let _ = writeln!(
            svg,
            r##"<path class="wedge" data-sector="{k}" data-count="{}" data-radius="{r:.4}" d="M {CENTER:.4} {CENTER:.4} L {x0:.4} {y0:.4} A {r:.4} {r:.4} 0 {large} 1 {x1:.4} {y1:.4} Z" fill="{}" stroke="#333333" stroke-width="0.5"/>"##,
            h.counts[k],
            hex(magnitude_color(t)),
        );
    }
    for (deg, dx, dy, anchor) in [
        (0, MAX_RADIUS + 8.0, 4.0, "start"),
        (90, 0.0, MAX_RADIUS + 16.0, "middle"),
        (180, -MAX_RADIUS - 8.0, 4.0, "end"),
        (270, 0.0, -MAX_RADIUS - 8.0, "middle"),
    ] {
        let _ = writeln!(
            svg,
            r##"<text class="angle-label" x="{:.4}" y="{:.4}" font-size="12" text-anchor="{anchor}">{deg}°</text>"##,
            CENTER + dx,
            CENTER + dy
        );
    }
    // colour bar
    let _ = writeln!(
        svg,
        r##"<defs><linearGradient id="magnitude" x1="0" y1="1" x2="0" y2="0">"##
    );
    for (i, stop) in VIRIDIS.iter().enumerate() {
        let _ = writeln!(
            svg,
            r##"<stop offset="{:.2}" stop-color="{}"/>"##,
            i as f64 / (VIRIDIS.len() - 1) as f64,
            hex(*stop)
        );
    }
    let _ = writeln!(svg, "</linearGradient></defs>");
    let _ = writeln!(
        svg,
        r##"<rect class="colorbar" x="360" y="30" width="14" height="300" fill="url(#magnitude)" stroke="#333333" stroke-width="0.5"/>"##
    );
    let _ = writeln!(
        svg,
        r##"<text x="367" y="345" font-size="10" text-anchor="middle">0</text>
<text x="367" y="24" font-size="10" text-anchor="middle">{max_mag:.2} px</text>"##
    );
    svg.push_str("</svg>\n");
    svg
}

pub fn render_polar_svg(h: &PolarHistogram, out_path: &Path) -> Result<String> {
    let svg = polar_svg(h);
    std::fs::write(out_path, &svg).map_err(|e| Error::io(out_path, e))?;
    Ok(svg)
}
