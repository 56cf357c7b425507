//! Image planes, synthetic scenes, ground-truth warping and the latent codecs
//! that stand in for a learned autoencoder.

use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::latent::{LatentState, RngStream};

/// An `H x W x C` image with values in `[0, 1]`, stored row-major, channels
/// interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                pixels.len()
            )));
        }
        if let Some(k) = pixels
            .iter()
            .position(|p| !p.is_finite() || *p < 0.0 || *p > 1.0)
        {
            return Err(Error::invalid(format!(
                "pixel value {} at index {k} outside [0, 1]",
                pixels[k]
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image from arbitrary values, clipping into `[0, 1]`.
    /// Non-finite values become 0.
    pub fn from_clipped(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        let pixels = pixels
            .into_iter()
            .map(|p| if p.is_finite() { p.clamp(0.0, 1.0) } else { 0.0 })
            .collect();
        Self::new(height, width, channels, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// Bilinear sample at fractional `(y, x)` with border clamping.
    pub fn sample_bilinear(&self, y: f64, x: f64, c: usize) -> f64 {
        let max_y = (self.height - 1) as f64;
        let max_x = (self.width - 1) as f64;
        let y = y.clamp(0.0, max_y);
        let x = x.clamp(0.0, max_x);
        let y0 = y.floor() as usize;
        let x0 = x.floor() as usize;
        let y1 = (y0 + 1).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let fy = y - y0 as f64;
        let fx = x - x0 as f64;
        let top = if fx == 0.0 {
            self.get(y0, x0, c)
        } else {
            (1.0 - fx) * self.get(y0, x0, c) + fx * self.get(y0, x1, c)
        };
        if fy == 0.0 {
            return top;
        }
        let bottom = if fx == 0.0 {
            self.get(y1, x0, c)
        } else {
            (1.0 - fx) * self.get(y1, x0, c) + fx * self.get(y1, x1, c)
        };
        (1.0 - fy) * top + fy * bottom
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let raw: Vec<u8> = self
            .pixels
            .iter()
            .map(|p| (p * 255.0).round() as u8)
            .collect();
        let (w, h) = (self.width as u32, self.height as u32);
        let dynamic = if self.channels == 1 {
            image::DynamicImage::ImageLuma8(
                image::GrayImage::from_raw(w, h, raw).expect("buffer sized by construction"),
            )
        } else {
            image::DynamicImage::ImageRgb8(
                image::RgbImage::from_raw(w, h, raw).expect("buffer sized by construction"),
            )
        };
        let mut out = Cursor::new(Vec::new());
        dynamic
            .write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| Error::format(format!("PNG encoding failed: {e}")))?;
        Ok(out.into_inner())
    }

    /// Decodes an 8-bit PNG; grayscale stays single-channel, everything else
    /// is converted to RGB.
    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        check_png_complete(bytes)?;
        let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| Error::format(format!("PNG decoding failed: {e}")))?;
        let (w, h) = (decoded.width() as usize, decoded.height() as usize);
        match decoded {
            image::DynamicImage::ImageLuma8(img) => Self::new(
                h,
                w,
                1,
                img.into_raw().into_iter().map(|p| p as f64 / 255.0).collect(),
            ),
            other => Self::new(
                h,
                w,
                3,
                other
                    .to_rgb8()
                    .into_raw()
                    .into_iter()
                    .map(|p| p as f64 / 255.0)
                    .collect(),
            ),
        }
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_png_bytes(&bytes)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_png_bytes()?).map_err(|e| Error::io(path, e))
    }
}

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', b'\r', b'\n', 0x1a, b'\n'];
const PNG_IEND: [u8; 12] = [0, 0, 0, 0, b'I', b'E', b'N', b'D', 0xae, 0x42, 0x60, 0x82];

/// Rejects byte strings that are not a whole PNG stream. The decoder alone
/// accepts files cut off after the last image data chunk.
pub(crate) fn check_png_complete(bytes: &[u8]) -> Result<()> {
    if !bytes.starts_with(&PNG_SIGNATURE) {
        return Err(Error::format("missing PNG signature"));
    }
    if !bytes.ends_with(&PNG_IEND) {
        return Err(Error::format(format!(
            "PNG stream of {} bytes does not end with an IEND chunk (truncated?)",
            bytes.len()
        )));
    }
    Ok(())
}

/// Synthetic scene description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SceneSpec {
    /// I.i.d. uniform noise per pixel and channel.
    RandomTexture {
        height: usize,
        width: usize,
        channels: usize,
    },
    /// `(x + y * W) / (H * W - 1)` in every channel.
    Gradient {
        height: usize,
        width: usize,
        channels: usize,
    },
    /// `count` square patches of side `size` over a low-contrast background.
    /// Patch pixels lie in `[0, 0.2] u [0.8, 1]`, background in `[0.4, 0.6]`,
    /// and patches never touch each other.
    TexturedBlocks {
        height: usize,
        width: usize,
        channels: usize,
        count: usize,
        size: usize,
    },
}

const BLOCK_PLACEMENT_ATTEMPTS: usize = 10_000;

pub fn synth_scene(spec: &SceneSpec, rng: &mut RngStream) -> Result<ImagePlane> {
    let (height, width, channels) = match *spec {
        SceneSpec::RandomTexture {
            height,
            width,
            channels,
        }
        | SceneSpec::Gradient {
            height,
            width,
            channels,
        }
        | SceneSpec::TexturedBlocks {
            height,
            width,
            channels,
            ..
        } => (height, width, channels),
    };
    if height < 8 || width < 8 {
        return Err(Error::invalid(format!(
            "synthetic scenes need at least 8x8 pixels, got {height}x{width}"
        )));
    }
    let n = height * width * channels;
    match *spec {
        SceneSpec::RandomTexture { .. } => {
            let pixels = (0..n).map(|_| rng.uniform()).collect();
            ImagePlane::new(height, width, channels, pixels)
        }
        SceneSpec::Gradient { .. } => {
            let denom = (height * width - 1) as f64;
            let mut pixels = Vec::with_capacity(n);
            for y in 0..height {
                for x in 0..width {
                    let v = (x + y * width) as f64 / denom;
                    pixels.extend(std::iter::repeat_n(v, channels));
                }
            }
            ImagePlane::new(height, width, channels, pixels)
        }
        SceneSpec::TexturedBlocks { count, size, .. } => {
            if size == 0 || size > height || size > width {
                return Err(Error::invalid(format!(
                    "block size {size} does not fit a {height}x{width} scene"
                )));
            }
            let mut pixels: Vec<f64> = (0..n).map(|_| 0.4 + 0.2 * rng.uniform()).collect();
            let mut placed: Vec<(usize, usize)> = Vec::with_capacity(count);
            let mut attempts = 0;
            while placed.len() < count {
                attempts += 1;
                if attempts > BLOCK_PLACEMENT_ATTEMPTS {
                    return Err(Error::invalid(format!(
                        "could not place {count} separated {size}x{size} blocks in {height}x{width}"
                    )));
                }
                let y = rng.uniform_int(0, height - size);
                let x = rng.uniform_int(0, width - size);
                // Require a one-pixel gap so blocks never touch.
                let clear = placed.iter().all(|&(py, px)| {
                    y > py + size || py > y + size || x > px + size || px > x + size
                });
                if clear {
                    placed.push((y, x));
                }
            }
            for &(by, bx) in &placed {
                for y in by..by + size {
                    for x in bx..bx + size {
                        for c in 0..channels {
                            let u = rng.uniform();
                            let v = if u < 0.5 { 0.4 * u } else { 0.6 + 0.4 * u };
                            pixels[(y * width + x) * channels + c] = v;
                        }
                    }
                }
            }
            ImagePlane::new(height, width, channels, pixels)
        }
    }
}

/// Backward warp: `out(p) = img(p - flow(p))`, bilinear, border-clamped.
///
/// With flow expressed as frame-1 to frame-2 displacement, estimating flow
/// from `(img, warp_image(img, v))` should recover `v`. Invalid flow pixels
/// are treated as zero displacement.
pub fn warp_image(img: &ImagePlane, flow: &FlowField) -> Result<ImagePlane> {
    if flow.height() != img.height() || flow.width() != img.width() {
        return Err(Error::invalid(format!(
            "flow is {}x{} but image is {}x{}",
            flow.height(),
            flow.width(),
            img.height(),
            img.width()
        )));
    }
    let (h, w, c) = img.dims();
    let mut out = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = if flow.is_valid(y, x) {
                flow.at(y, x)
            } else {
                (0.0, 0.0)
            };
            let (sy, sx) = (y as f64 - v, x as f64 - u);
            for ch in 0..c {
                out.push(img.sample_bilinear(sy, sx, ch));
            }
        }
    }
    ImagePlane::from_clipped(h, w, c, out)
}

/// Image/latent mapping. Latents are laid out channel-major, shape `[C, H, W]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LatentCodec {
    /// Lossless flatten.
    Identity,
    /// `factor x factor` block means; decodes by bilinear upsampling.
    BlockAverage { factor: usize },
}

impl LatentCodec {
    pub fn encode(&self, img: &ImagePlane) -> Result<LatentState> {
        let (h, w, c) = img.dims();
        match *self {
            LatentCodec::Identity => {
                let mut data = Vec::with_capacity(h * w * c);
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            data.push(img.get(y, x, ch));
                        }
                    }
                }
                LatentState::new(data, vec![c, h, w])
            }
            LatentCodec::BlockAverage { factor } => {
                self.check_factor(h, w)?;
                let (lh, lw) = (h / factor, w / factor);
                let norm = (factor * factor) as f64;
                let mut data = Vec::with_capacity(lh * lw * c);
                for ch in 0..c {
                    for by in 0..lh {
                        for bx in 0..lw {
                            let mut sum = 0.0;
                            for y in by * factor..(by + 1) * factor {
                                for x in bx * factor..(bx + 1) * factor {
                                    sum += img.get(y, x, ch);
                                }
                            }
                            data.push(sum / norm);
                        }
                    }
                }
                LatentState::new(data, vec![c, lh, lw])
            }
        }
    }

    /// Decodes and clips into `[0, 1]`.
    pub fn decode(&self, z: &LatentState) -> Result<ImagePlane> {
        let &[c, lh, lw] = z.shape() else {
            return Err(Error::invalid(format!(
                "image latents have shape [C, H, W], got {:?}",
                z.shape()
            )));
        };
        let data = z.data();
        let at = |ch: usize, y: usize, x: usize| data[(ch * lh + y) * lw + x];
        match *self {
            LatentCodec::Identity => {
                let mut pixels = Vec::with_capacity(lh * lw * c);
                for y in 0..lh {
                    for x in 0..lw {
                        for ch in 0..c {
                            pixels.push(at(ch, y, x));
                        }
                    }
                }
                ImagePlane::from_clipped(lh, lw, c, pixels)
            }
            LatentCodec::BlockAverage { factor } => {
                if factor == 0 {
                    return Err(Error::invalid("block-average factor must be >= 1"));
                }
                let (h, w) = (lh * factor, lw * factor);
                let mut pixels = Vec::with_capacity(h * w * c);
                for y in 0..h {
                    // pixel-centre alignment between the fine and coarse grids
                    let sy = ((y as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (lh - 1) as f64);
                    let (y0, fy) = (sy.floor() as usize, sy - sy.floor());
                    let y1 = (y0 + 1).min(lh - 1);
                    for x in 0..w {
                        let sx =
                            ((x as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (lw - 1) as f64);
                        let (x0, fx) = (sx.floor() as usize, sx - sx.floor());
                        let x1 = (x0 + 1).min(lw - 1);
                        for ch in 0..c {
                            let top = (1.0 - fx) * at(ch, y0, x0) + fx * at(ch, y0, x1);
                            let bottom = (1.0 - fx) * at(ch, y1, x0) + fx * at(ch, y1, x1);
                            pixels.push((1.0 - fy) * top + fy * bottom);
                        }
                    }
                }
                ImagePlane::from_clipped(h, w, c, pixels)
            }
        }
    }

    fn check_factor(&self, h: usize, w: usize) -> Result<()> {
        if let LatentCodec::BlockAverage { factor } = *self {
            if factor == 0 || h % factor != 0 || w % factor != 0 {
                return Err(Error::invalid(format!(
                    "block-average factor {factor} must divide the {h}x{w} image"
                )));
            }
        }
        Ok(())
    }
}
