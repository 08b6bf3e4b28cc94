//! Texture swapping: builds the similarity-weighted texture map from the
//! reference features and a match correspondence, plus the resampling that
//! prepares the matching inputs.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::imaging::{bicubic_resize, Scale};
use crate::matcher::{MatchConfig, MatchResult};
use crate::tensor::{ImageTensor, Scalar, Tensor};

/// A 4× image upscaler used to bring the input and the blurred reference to a common resolution.
pub trait Upscaler {
    fn upscale4(&self, img: &ImageTensor) -> Result<ImageTensor>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Bicubic;

impl Upscaler for Bicubic {
    fn upscale4(&self, img: &ImageTensor) -> Result<ImageTensor> {
        bicubic_resize(img, Scale::up(4))
    }
}

impl<F: Fn(&ImageTensor) -> Result<ImageTensor>> Upscaler for F {
    fn upscale4(&self, img: &ImageTensor) -> Result<ImageTensor> {
        self(img)
    }
}

/// Returns `(upscaled input, reference blurred by a 1/4 → 4× round trip)`.
pub fn scale_adjust(i_lr: &ImageTensor, i_ref: &ImageTensor, upscaler: &dyn Upscaler) -> Result<(ImageTensor, ImageTensor)> {
    if !i_ref.height().is_multiple_of(4) || !i_ref.width().is_multiple_of(4) {
        return Err(Error::invalid(format!(
            "reference {}×{} must have extents divisible by 4",
            i_ref.height(),
            i_ref.width()
        )));
    }
    let lr_up = upscaler.upscale4(i_lr)?;
    let ref_small = bicubic_resize(i_ref, Scale::down(4))?;
    let ref_blurred_up = upscaler.upscale4(&ref_small)?;
    Ok((lr_up, ref_blurred_up))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightMode {
    /// Scale each location by its clamped similarity score.
    #[default]
    MultiplySim,
    /// Leave the averaged texture unweighted.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwapConfig {
    pub patch_size: usize,
    pub stride: usize,
    pub weight_mode: WeightMode,
}

impl Default for SwapConfig {
    fn default() -> Self {
        SwapConfig::from(&MatchConfig::default())
    }
}

impl From<&MatchConfig> for SwapConfig {
    fn from(m: &MatchConfig) -> Self {
        SwapConfig { patch_size: m.patch_size, stride: m.stride, weight_mode: WeightMode::MultiplySim }
    }
}

type CountCache = Mutex<HashMap<(usize, usize, usize), Arc<Vec<u32>>>>;

/// Number of pasted patches covering each cell of an `h×w` grid.
fn paste_counts(h: usize, w: usize, k: usize) -> Arc<Vec<u32>> {
    static CACHE: OnceLock<CountCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    guard
        .entry((h, w, k))
        .or_insert_with(|| {
            let r = k / 2;
            let cover = |i: usize, n: usize| (i.saturating_sub(r)..=(i + r).min(n - 1)).count() as u32;
            let rows: Vec<u32> = (0..h).map(|y| cover(y, h)).collect();
            let cols: Vec<u32> = (0..w).map(|x| cover(x, w)).collect();
            Arc::new(rows.iter().flat_map(|&ry| cols.iter().map(move |&cx| ry * cx)).collect())
        })
        .clone()
}

/// Pastes the matched reference patch at every location, averages overlaps
/// and (by default) weights each location by its clamped similarity.
pub fn swap_texture<T: Scalar>(m_ref: &FeatureMap<T>, matched: &MatchResult<T>, cfg: &SwapConfig) -> Result<FeatureMap<T>> {
    if cfg.patch_size != matched.patch_size() || cfg.stride != matched.stride() {
        return Err(Error::invalid(format!(
            "swap uses {}×{} / stride {}, match used {}×{} / stride {}",
            cfg.patch_size,
            cfg.patch_size,
            cfg.stride,
            matched.patch_size(),
            matched.patch_size(),
            matched.stride()
        )));
    }
    if (m_ref.height(), m_ref.width()) != matched.ref_dims() {
        return Err(Error::shape(format!(
            "reference map is {}×{} but the match indexes a {}×{} grid",
            m_ref.height(),
            m_ref.width(),
            matched.ref_dims().0,
            matched.ref_dims().1
        )));
    }
    let n_cand = matched.candidate_count();
    if let Some(&bad) = matched.index_map().iter().find(|&&i| i >= n_cand) {
        return Err(Error::IndexOutOfRange { index: bad, len: n_cand });
    }

    let k = cfg.patch_size;
    let r = k / 2;
    let (c, rh, rw) = (m_ref.channels(), m_ref.height(), m_ref.width());
    let (h, w) = (matched.height(), matched.width());
    let (_, cand_cols) = matched.candidate_grid();
    let src = m_ref.data();
    let mut acc = vec![T::zero(); c * h * w];

    for y in 0..h {
        for x in 0..w {
            let j = matched.index_map()[y * w + x];
            let (cy, cx) = ((j / cand_cols) * cfg.stride, (j % cand_cols) * cfg.stride);
            for dy in 0..k {
                let oy = y as isize + dy as isize - r as isize;
                if oy < 0 || oy >= h as isize {
                    continue;
                }
                for dx in 0..k {
                    let ox = x as isize + dx as isize - r as isize;
                    if ox < 0 || ox >= w as isize {
                        continue;
                    }
                    let dst = oy as usize * w + ox as usize;
                    let s = (cy + dy) * rw + cx + dx;
                    for ch in 0..c {
                        acc[ch * h * w + dst] += src[ch * rh * rw + s];
                    }
                }
            }
        }
    }

    let counts = paste_counts(h, w, k);
    let weights = match cfg.weight_mode {
        WeightMode::MultiplySim => Some(matched.weights()),
        WeightMode::Unit => None,
    };
    for ch in 0..c {
        for i in 0..h * w {
            let v = &mut acc[ch * h * w + i];
            *v /= T::from_u32(counts[i]).unwrap();
            if let Some(wts) = &weights {
                *v *= wts[i];
            }
        }
    }
    FeatureMap::new(Tensor::from_vec(&[c, h, w], acc)?, m_ref.level())
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_map(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(0.0..1.0)).collect(), "L3").unwrap()
    }

    fn identity_match(h: usize, w: usize, sim: Vec<f64>) -> MatchResult<f64> {
        // Patch size 1 makes candidate j the cell j itself.
        let cfg = MatchConfig { patch_size: 1, ..Default::default() };
        MatchResult::from_parts(h, w, (h, w), &cfg, (0..h * w).collect(), sim).unwrap()
    }

    #[test]
    fn identity_swap_with_unit_weights() {
        let m = random_map(3, 5, 6, 1);
        let res = identity_match(5, 6, vec![1.0; 30]);
        let cfg = SwapConfig { patch_size: 1, stride: 1, weight_mode: WeightMode::MultiplySim };
        assert_eq!(swap_texture(&m, &res, &cfg).unwrap(), m);
    }

    #[test]
    fn zero_similarity_suppresses_everything() {
        let m = random_map(2, 4, 4, 2);
        let res = identity_match(4, 4, vec![0.0; 16]);
        let cfg = SwapConfig { patch_size: 1, stride: 1, weight_mode: WeightMode::MultiplySim };
        let out = swap_texture(&m, &res, &cfg).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        let unit = SwapConfig { weight_mode: WeightMode::Unit, ..cfg };
        assert_eq!(swap_texture(&m, &res, &unit).unwrap(), m);
    }

    #[test]
    fn hand_computed_overlap_average() {
        // 1×3×3 reference holding 1..9; one candidate (the whole map).
        let m = FeatureMap::from_vec(1, 3, 3, (1..=9).map(|v| v as f64).collect(), "t").unwrap();
        let cfg = MatchConfig::default();
        // A 1×2 grid, both locations pointing at candidate 0.
        let res = MatchResult::from_parts(1, 2, (3, 3), &cfg, vec![0, 0], vec![1.0, 1.0]).unwrap();
        let out = swap_texture(&m, &res, &SwapConfig::default()).unwrap();
        // Location (0,0) contributes centre-row cols 1,2 = (5,6) to cells 0,1;
        // location (0,1) contributes cols 0,1 = (4,5).
        assert_eq!(out.data(), &[4.5, 5.5]);

        let res = MatchResult::from_parts(1, 2, (3, 3), &cfg, vec![0, 0], vec![0.5, 1.0]).unwrap();
        let out = swap_texture(&m, &res, &SwapConfig::default()).unwrap();
        assert_eq!(out.data(), &[2.25, 5.5]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = random_map(1, 4, 4, 3);
        let cfg = MatchConfig::default();
        let res = MatchResult::from_parts(2, 2, (5, 5), &cfg, vec![0; 4], vec![1.0; 4]).unwrap();
        assert!(matches!(swap_texture(&m, &res, &SwapConfig::default()), Err(Error::Shape(_))));
        let res = MatchResult::from_parts(2, 2, (4, 4), &cfg, vec![0; 4], vec![1.0; 4]).unwrap();
        let other = SwapConfig { patch_size: 1, ..Default::default() };
        assert!(swap_texture(&m, &res, &other).is_err());
    }

    #[test]
    fn scale_adjust_shapes_and_constants() {
        let lr = ImageTensor::filled(40, 40, 3, 0.3).unwrap();
        let rf = ImageTensor::filled(160, 160, 3, 0.5).unwrap();
        let (lr_up, ref_up) = scale_adjust(&lr, &rf, &Bicubic).unwrap();
        assert_eq!(lr_up.dims(), (160, 160, 3));
        assert_eq!(ref_up.dims(), (160, 160, 3));
        assert!(ref_up.data().iter().all(|&v| (v - 0.5).abs() < 1e-6));
        let odd = ImageTensor::filled(162, 160, 3, 0.5).unwrap();
        assert!(scale_adjust(&lr, &odd, &Bicubic).is_err());
    }
}
