//! Bicubic resampling and PNG input/output.

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Catmull-Rom parameter of the cubic convolution kernel.
const CUBIC_A: f64 = -0.5;

/// A positive rational resize factor `num/den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scale {
    pub num: usize,
    pub den: usize,
}

impl Scale {
    pub const fn new(num: usize, den: usize) -> Self {
        Scale { num, den }
    }

    pub const fn up(factor: usize) -> Self {
        Scale { num: factor, den: 1 }
    }

    pub const fn down(factor: usize) -> Self {
        Scale { num: 1, den: factor }
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Scaled extent, or an error when it is zero or not an integer.
    pub fn apply(self, extent: usize) -> Result<usize> {
        if self.num == 0 || self.den == 0 {
            return Err(Error::invalid(format!("scale {}/{} is not positive", self.num, self.den)));
        }
        let scaled = extent * self.num;
        if !scaled.is_multiple_of(self.den) || scaled == 0 {
            return Err(Error::invalid(format!(
                "extent {extent} × {}/{} is not a positive integer",
                self.num, self.den
            )));
        }
        Ok(scaled / self.den)
    }
}

fn cubic(t: f64) -> f64 {
    let t = t.abs();
    let a = CUBIC_A;
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Per-output-sample taps along one axis: clamped source index and normalized weight.
struct AxisWeights {
    taps: Vec<Vec<(usize, f64)>>,
}

impl AxisWeights {
    fn new(in_len: usize, out_len: usize) -> Self {
        let scale = out_len as f64 / in_len as f64;
        // Widen the kernel when shrinking so that it also low-pass filters.
        let stretch = if scale < 1.0 { 1.0 / scale } else { 1.0 };
        let support = 2.0 * stretch;
        let taps = (0..out_len)
            .map(|o| {
                let center = (o as f64 + 0.5) / scale - 0.5;
                let lo = (center - support).floor() as isize;
                let hi = (center + support).ceil() as isize;
                let mut row: Vec<(usize, f64)> = Vec::with_capacity((hi - lo + 1) as usize);
                let mut total = 0.0;
                for x in lo..=hi {
                    let w = cubic((x as f64 - center) / stretch);
                    if w == 0.0 {
                        continue;
                    }
                    let src = x.clamp(0, in_len as isize - 1) as usize;
                    total += w;
                    row.push((src, w));
                }
                for tap in &mut row {
                    tap.1 /= total;
                }
                row
            })
            .collect();
        AxisWeights { taps }
    }
}

/// Separable cubic-convolution resize with clamped borders.
///
/// Shrinking widens the kernel by the inverse scale (antialiasing). The result
/// is clamped to `[0,1]`.
pub fn bicubic_resize(img: &ImageTensor, scale: Scale) -> Result<ImageTensor> {
    let (h, w, c) = img.dims();
    let out_h = scale.apply(h)?;
    let out_w = scale.apply(w)?;
    if out_h == h && out_w == w {
        return Ok(img.clone());
    }

    let wx = AxisWeights::new(w, out_w);
    let mut tmp = vec![0f64; h * out_w * c];
    for y in 0..h {
        for (ox, taps) in wx.taps.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                for &(sx, wt) in taps {
                    acc += wt * img.get(y, sx, ch) as f64;
                }
                tmp[(y * out_w + ox) * c + ch] = acc;
            }
        }
    }

    let wy = AxisWeights::new(h, out_h);
    let mut out = vec![0f32; out_h * out_w * c];
    for (oy, taps) in wy.taps.iter().enumerate() {
        for ox in 0..out_w {
            for ch in 0..c {
                let mut acc = 0.0;
                for &(sy, wt) in taps {
                    acc += wt * tmp[(sy * out_w + ox) * c + ch];
                }
                out[(oy * out_w + ox) * c + ch] = acc as f32;
            }
        }
    }
    ImageTensor::from_clamped(out_h, out_w, c, out)
}

#[cfg(feature = "png")]
pub use png_io::{read_png, write_png};

#[cfg(feature = "png")]
mod png_io {
    use std::path::Path;

    use image::{DynamicImage, GrayImage, RgbImage};

    use super::*;

    fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
        Error::Image { path: path.to_path_buf(), msg: e.to_string() }
    }

    /// Reads an 8-bit PNG. Grayscale stays single-channel, everything else becomes RGB.
    pub fn read_png(path: impl AsRef<Path>) -> Result<ImageTensor> {
        let path = path.as_ref();
        let dynimg = image::open(path).map_err(|e| image_err(path, e))?;
        let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
        match dynimg {
            DynamicImage::ImageLuma8(g) => {
                let data = g.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
                ImageTensor::new(h, w, 1, data)
            }
            other => {
                let data = other.to_rgb8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
                ImageTensor::new(h, w, 3, data)
            }
        }
    }

    /// Writes an 8-bit PNG, rounding `v·255` to the nearest integer.
    pub fn write_png(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes: Vec<u8> = img.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
        let (w, h) = (img.width() as u32, img.height() as u32);
        let res = if img.channels() == 1 {
            GrayImage::from_raw(w, h, bytes).expect("buffer sized from dims").save(path)
        } else {
            RgbImage::from_raw(w, h, bytes).expect("buffer sized from dims").save(path)
        };
        res.map_err(|e| image_err(path, e))
    }
}
