//! PSNR and SSIM on `[0,1]` images.

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Reported PSNR when the two images are (numerically) identical.
pub const PSNR_CAP_DB: f64 = 100.0;
const PSNR_MIN_MSE: f64 = 1e-10;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_same(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("image {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// PSNR from raw samples on the unit range, capped at [`PSNR_CAP_DB`].
pub fn psnr_samples(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(format!("{} vs {} samples", a.len(), b.len())));
    }
    let mse = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse < PSNR_MIN_MSE {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// PSNR over all channels jointly.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same(a, b)?;
    psnr_samples(a.data(), b.data())
}

/// PSNR of the luminance channel.
pub fn psnr_luma(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same(a, b)?;
    psnr_samples(a.luminance().data(), b.luminance().data())
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" Gaussian filtering of a single plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..k).map(|i| g[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let g = gaussian_window();
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = filter_valid(a, h, w, &g);
    let mu_b = filter_valid(b, h, w, &g);
    let aa = filter_valid(&prod(a, a), h, w, &g);
    let bb = filter_valid(&prod(b, b), h, w, &g);
    let ab = filter_valid(&prod(a, b), h, w, &g);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    total / n as f64
}

fn plane(img: &ImageTensor, ch: usize) -> Vec<f64> {
    let c = img.channels();
    img.data().iter().skip(ch).step_by(c).map(|&v| v as f64).collect()
}

fn check_window(a: &ImageTensor) -> Result<()> {
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "{}×{} image is smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} SSIM window",
            a.height(),
            a.width()
        )));
    }
    Ok(())
}

/// Mean SSIM on the luminance channel (the channel itself for grayscale).
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same(a, b)?;
    check_window(a)?;
    if a == b {
        return Ok(1.0);
    }
    let (la, lb) = (a.luminance(), b.luminance());
    Ok(ssim_plane(&plane(&la, 0), &plane(&lb, 0), a.height(), a.width()))
}

/// Mean SSIM averaged over every channel independently.
pub fn ssim_channels(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_same(a, b)?;
    check_window(a)?;
    if a == b {
        return Ok(1.0);
    }
    let c = a.channels();
    let total: f64 = (0..c).map(|ch| ssim_plane(&plane(a, ch), &plane(b, ch), a.height(), a.width())).sum();
    Ok(total / c as f64)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn noise(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::new(h, w, 1, (0..h * w).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    /// Window-by-window scalar SSIM, no separable filtering.
    fn ssim_oracle(a: &ImageTensor, b: &ImageTensor) -> f64 {
        let k = SSIM_WINDOW;
        let r = (k / 2) as f64;
        let mut g2 = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                let d = (i as f64 - r).powi(2) + (j as f64 - r).powi(2);
                g2[i * k + j] = (-d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            }
        }
        let s: f64 = g2.iter().sum();
        g2.iter_mut().for_each(|v| *v /= s);
        let (h, w) = (a.height(), a.width());
        let mut total = 0.0;
        let mut count = 0;
        for y in 0..=h - k {
            for x in 0..=w - k {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let wt = g2[i * k + j];
                        let p = a.get(y + i, x + j, 0) as f64;
                        let q = b.get(y + i, x + j, 0) as f64;
                        ma += wt * p;
                        mb += wt * q;
                        saa += wt * p * p;
                        sbb += wt * q * q;
                        sab += wt * p * q;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn psnr_identical_is_capped() {
        let a = noise(8, 8, 1);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_constant_offsets() {
        let a = ImageTensor::filled(4, 4, 3, 0.2).unwrap();
        let b = ImageTensor::filled(4, 4, 3, 0.3).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
        let c = ImageTensor::filled(4, 4, 3, 0.25).unwrap();
        let d = ImageTensor::filled(4, 4, 3, 0.75).unwrap();
        let expected = 10.0 * (1.0f64 / 0.25).log10();
        assert!((psnr(&c, &d).unwrap() - expected).abs() < 1e-9);
        assert!((expected - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn psnr_symmetric_and_shape_checked() {
        let (a, b) = (noise(8, 8, 2), noise(8, 8, 3));
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!(psnr(&a, &noise(8, 9, 3)).is_err());
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = noise(16, 16, 4);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ssim_constant_closed_form() {
        let a = ImageTensor::filled(16, 16, 1, 0.2).unwrap();
        let b = ImageTensor::filled(16, 16, 1, 0.8).unwrap();
        let (ma, mb) = (0.2f64, 0.8f64);
        let expected = ((2.0 * ma * mb + SSIM_C1) * SSIM_C2) / ((ma * ma + mb * mb + SSIM_C1) * SSIM_C2);
        let got = ssim(&a, &b).unwrap();
        assert!((got - expected).abs() < 1e-5, "{got} vs {expected}");
    }

    #[test]
    fn ssim_inverted_noise_matches_oracle() {
        let a = noise(64, 64, 5);
        let inv: Vec<f32> = a.data().iter().map(|v| 1.0 - v).collect();
        let b = ImageTensor::new(64, 64, 1, inv).unwrap();
        let got = ssim(&a, &b).unwrap();
        let oracle = ssim_oracle(&a, &b);
        assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
        assert!(got < 0.1);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = noise(10, 32, 6);
        assert!(ssim(&a, &a).is_err());
    }
}
