//! Flow file codecs and visualisation.

mod color;
mod flo;
mod kitti;
mod svg;

use std::path::Path;

pub use color::{color_wheel, flow_color, flow_to_color, WHEEL_SIZE};
pub use flo::{decode_flo, encode_flo, FLO_INVALID_THRESHOLD, FLO_INVALID_VALUE, FLO_MAGIC};
pub use kitti::{decode_kitti_png, encode_kitti_png, kitti_channel, KITTI_MAX_COMPONENT};
pub use svg::{magnitude_color, polar_svg, render_polar_svg, wedge_radii};

use crate::error::{Error, Result};
use crate::flow::FlowField;

/// Reads a flow file, choosing the codec by extension (`.flo` or `.png`).
pub fn read_flow(path: &Path) -> Result<FlowField> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match extension(path).as_deref() {
        Some("flo") => decode_flo(&bytes),
        Some("png") => decode_kitti_png(&bytes),
        _ => Err(Error::invalid(format!(
            "{}: unknown flow format (expected .flo or .png)",
            path.display()
        ))),
    }
}

pub fn write_flow(path: &Path, flow: &FlowField) -> Result<()> {
    let bytes = match extension(path).as_deref() {
        Some("flo") => encode_flo(flow)?,
        Some("png") => encode_kitti_png(flow)?,
        _ => {
            return Err(Error::invalid(format!(
                "{}: unknown flow format (expected .flo or .png)",
                path.display()
            )))
        }
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}
