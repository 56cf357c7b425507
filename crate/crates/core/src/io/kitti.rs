//! KITTI flow PNG: 16-bit RGB with `u = (R - 2^15) / 64`, `v = (G - 2^15) / 64`
//! and `B` the validity flag.

use std::io::Cursor;

use image::{DynamicImage, ImageBuffer, ImageFormat, Rgb};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::image::check_png_complete;

const OFFSET: f64 = 32768.0;
const SCALE: f64 = 64.0;
/// Largest encodable component magnitude in pixels.
pub const KITTI_MAX_COMPONENT: f64 = 32767.0 / 64.0;

/// Quantises one component. Caller checks the range.
pub fn kitti_channel(value: f64) -> u16 {
    (value * SCALE + OFFSET).round() as u16
}

pub fn encode_kitti_png(flow: &FlowField) -> Result<Vec<u8>> {
    let (h, w) = flow.dims();
    let mut raw = Vec::with_capacity(h * w * 3);
    for k in 0..flow.len() {
        if !flow.valid()[k] {
            raw.extend_from_slice(&[0, 0, 0]);
            continue;
        }
        let (u, v) = (flow.u()[k], flow.v()[k]);
        if !(u.abs() <= KITTI_MAX_COMPONENT && v.abs() <= KITTI_MAX_COMPONENT) {
            return Err(Error::Range {
                x: k % w,
                y: k / w,
                message: format!(
                    "({u}, {v}) exceeds the KITTI range of +-{KITTI_MAX_COMPONENT} px"
                ),
            });
        }
        raw.extend_from_slice(&[kitti_channel(u), kitti_channel(v), 1]);
    }
    let buf: ImageBuffer<Rgb<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).expect("buffer sized by construction");
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageRgb16(buf)
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::format(format!("PNG encoding failed: {e}")))?;
    Ok(out.into_inner())
}

pub fn decode_kitti_png(bytes: &[u8]) -> Result<FlowField> {
    check_png_complete(bytes)?;
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::format(format!("PNG decoding failed: {e}")))?;
    let DynamicImage::ImageRgb16(buf) = img else {
        return Err(Error::format(format!(
            "KITTI flow needs a 16-bit RGB PNG, got {:?}",
            img.color()
        )));
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let n = w * h;
    let (mut u, mut v, mut valid) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for px in buf.pixels() {
        let [r, g, b] = px.0;
        if b == 0 {
            u.push(0.0);
            v.push(0.0);
            valid.push(false);
        } else {
            u.push((r as f64 - OFFSET) / SCALE);
            v.push((g as f64 - OFFSET) / SCALE);
            valid.push(true);
        }
    }
    FlowField::new(h, w, u, v, valid)
}
