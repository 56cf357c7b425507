//! Middlebury `.flo`: a `202021.25` float tag, little-endian `i32` width and
//! height, then row-major interleaved little-endian `f32` `(u, v)` pairs.

use crate::error::{Error, Result};
use crate::flow::FlowField;

pub const FLO_MAGIC: f32 = 202021.25;
const HEADER_LEN: usize = 12;
/// Components with a larger magnitude mark the pixel invalid.
pub const FLO_INVALID_THRESHOLD: f32 = 1e9;
/// Written for both components of invalid pixels.
pub const FLO_INVALID_VALUE: f32 = 1e10;

pub fn encode_flo(flow: &FlowField) -> Result<Vec<u8>> {
    let (h, w) = flow.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * h * w);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&dim_to_i32(w)?.to_le_bytes());
    out.extend_from_slice(&dim_to_i32(h)?.to_le_bytes());
    for k in 0..flow.len() {
        let (u, v) = if flow.valid()[k] {
            let (u, v) = (flow.u()[k] as f32, flow.v()[k] as f32);
            if !(u.is_finite() && v.is_finite())
                || u.abs() > FLO_INVALID_THRESHOLD
                || v.abs() > FLO_INVALID_THRESHOLD
            {
                return Err(Error::Range {
                    x: k % w,
                    y: k / w,
                    message: format!("({u}, {v}) is not representable as a valid .flo vector"),
                });
            }
            (u, v)
        } else {
            (FLO_INVALID_VALUE, FLO_INVALID_VALUE)
        };
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn dim_to_i32(d: usize) -> Result<i32> {
    i32::try_from(d).map_err(|_| Error::invalid(format!("dimension {d} too large for .flo")))
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(format!(
            ".flo header needs {HEADER_LEN} bytes, got {}",
            bytes.len()
        )));
    }
    let magic = &bytes[0..4];
    if magic != FLO_MAGIC.to_le_bytes() {
        return Err(Error::format(format!(
            "bad .flo magic {magic:02x?}, expected {:02x?}",
            FLO_MAGIC.to_le_bytes()
        )));
    }
    let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if width <= 0 || height <= 0 {
        return Err(Error::format(format!(
            "non-positive .flo dimensions {width}x{height}"
        )));
    }
    let (w, h) = (width as usize, height as usize);
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::format(format!("{width}x{height} .flo overflows")))?;
    if bytes.len() != expected {
        return Err(Error::format(format!(
            "{width}x{height} .flo needs {expected} bytes, got {}",
            bytes.len()
        )));
    }
    let n = w * h;
    let (mut u, mut v, mut valid) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for px in bytes[HEADER_LEN..].chunks_exact(8) {
        let a = f32::from_le_bytes(px[0..4].try_into().unwrap());
        let b = f32::from_le_bytes(px[4..8].try_into().unwrap());
        let ok = a.is_finite()
            && b.is_finite()
            && a.abs() <= FLO_INVALID_THRESHOLD
            && b.abs() <= FLO_INVALID_THRESHOLD;
        u.push(a as f64);
        v.push(b as f64);
        valid.push(ok);
    }
    FlowField::new(h, w, u, v, valid)
}
