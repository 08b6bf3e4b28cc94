//! Dense normalized patch matching between two feature maps.
//!
//! Every location of the input map is scored against every (unpadded) patch
//! of the reference map by cosine similarity of the flattened `C×k×k` patches.
//! The input side is zero-padded so the result lives on the input's grid.
//!
//! [`match_bruteforce`] is the plain definition. [`match_features`] treats the
//! normalized reference patches as convolution kernels and evaluates all of
//! them at once as a packed matrix product, blocked over the shared dimension
//! and split over output rows. Each score is accumulated in the same order as
//! in the brute-force route, so both produce bit-identical scores.

use crate::error::{Error, Result};
use crate::exchange;
use crate::features::FeatureMap;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    pub patch_size: usize,
    pub stride: usize,
    pub epsilon: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig { patch_size: 3, stride: 1, epsilon: 1e-12 }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.patch_size.is_multiple_of(2) {
            return Err(Error::invalid(format!("patch size {} must be odd and ≥ 1", self.patch_size)));
        }
        if self.stride == 0 {
            return Err(Error::invalid("match stride must be ≥ 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("match epsilon must be positive"));
        }
        Ok(())
    }

    /// Number of unpadded patch positions along an axis of length `len`.
    pub fn positions(&self, len: usize) -> usize {
        if len < self.patch_size {
            0
        } else {
            (len - self.patch_size) / self.stride + 1
        }
    }
}

/// Flattened patches, one row of `C·k·k` values per position.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet<T: Scalar> {
    pub rows: usize,
    pub cols: usize,
    /// Top-left corner `(y, x)` of every patch, raster order.
    pub corners: Vec<(usize, usize)>,
    pub dim: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> PatchSet<T> {
    pub fn count(&self) -> usize {
        self.corners.len()
    }

    pub fn patch(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn check_fits<T: Scalar>(f: &FeatureMap<T>, cfg: &MatchConfig, what: &str) -> Result<()> {
    if f.height() < cfg.patch_size || f.width() < cfg.patch_size {
        return Err(Error::shape(format!(
            "{what} map {}×{} is smaller than the {k}×{k} patch",
            f.height(),
            f.width(),
            k = cfg.patch_size
        )));
    }
    Ok(())
}

/// Densely samples unpadded patches in raster order, channel-major within a patch.
pub fn extract_patches<T: Scalar>(f: &FeatureMap<T>, cfg: &MatchConfig) -> Result<PatchSet<T>> {
    cfg.validate()?;
    check_fits(f, cfg, "feature")?;
    let k = cfg.patch_size;
    let (c, h, w) = (f.channels(), f.height(), f.width());
    let (rows, cols) = (cfg.positions(h), cfg.positions(w));
    let dim = c * k * k;
    let src = f.data();
    let mut data = Vec::with_capacity(rows * cols * dim);
    let mut corners = Vec::with_capacity(rows * cols);
    for py in 0..rows {
        for px in 0..cols {
            let (y0, x0) = (py * cfg.stride, px * cfg.stride);
            corners.push((y0, x0));
            for ch in 0..c {
                for dy in 0..k {
                    let row = &src[(ch * h + y0 + dy) * w + x0..][..k];
                    data.extend_from_slice(row);
                }
            }
        }
    }
    Ok(PatchSet { rows, cols, corners, dim, data })
}

/// Zero-padded patches centred on every location of `f`, raster order.
fn centred_patches<T: Scalar>(f: &FeatureMap<T>, k: usize) -> Vec<T> {
    let (c, h, w) = (f.channels(), f.height(), f.width());
    let r = (k / 2) as isize;
    let dim = c * k * k;
    let src = f.data();
    let mut out = vec![T::zero(); h * w * dim];
    for y in 0..h {
        for x in 0..w {
            let dst = &mut out[(y * w + x) * dim..][..dim];
            for ch in 0..c {
                for dy in 0..k {
                    let sy = y as isize + dy as isize - r;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for dx in 0..k {
                        let sx = x as isize + dx as isize - r;
                        if sx >= 0 && sx < w as isize {
                            dst[(ch * k + dy) * k + dx] = src[(ch * h + sy as usize) * w + sx as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Scales every row of a row-major matrix by `1 / (‖row‖ + eps)`.
fn normalize_rows<T: Scalar>(data: &mut [T], dim: usize, eps: T) {
    for row in data.chunks_exact_mut(dim) {
        let mut sq = T::zero();
        for &v in row.iter() {
            sq += v * v;
        }
        let inv = T::one() / (sq.sqrt() + eps);
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// Best reference patch per input location.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult<T: Scalar = f32> {
    height: usize,
    width: usize,
    ref_height: usize,
    ref_width: usize,
    patch_size: usize,
    stride: usize,
    index_map: Vec<usize>,
    sim_map: Vec<T>,
}

impl<T: Scalar> MatchResult<T> {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Spatial extents of the map the candidate indices refer to.
    pub fn ref_dims(&self) -> (usize, usize) {
        (self.ref_height, self.ref_width)
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Candidate grid `(rows, cols)` of the reference map.
    pub fn candidate_grid(&self) -> (usize, usize) {
        let cfg = MatchConfig { patch_size: self.patch_size, stride: self.stride, epsilon: 1.0 };
        (cfg.positions(self.ref_height), cfg.positions(self.ref_width))
    }

    pub fn candidate_count(&self) -> usize {
        let (r, c) = self.candidate_grid();
        r * c
    }

    pub fn index_map(&self) -> &[usize] {
        &self.index_map
    }

    /// Raw best cosine scores in `[-1, 1]`.
    pub fn sim_map(&self) -> &[T] {
        &self.sim_map
    }

    /// Scores clamped to `[0, 1]` for use as multiplicative weights.
    pub fn weights(&self) -> Vec<T> {
        self.sim_map.iter().map(|&s| s.max(T::zero()).min(T::one())).collect()
    }

    /// Clamped scores as a `1×H×W` map.
    pub fn weight_map(&self) -> FeatureMap<T> {
        FeatureMap::from_vec(1, self.height, self.width, self.weights(), "sim").expect("finite scores")
    }

    pub fn mean_similarity(&self) -> f64 {
        self.sim_map.iter().map(|s| s.to_f64().unwrap()).sum::<f64>() / self.sim_map.len() as f64
    }

    /// Builds a result from explicit maps; indices are validated against the candidate grid.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        height: usize,
        width: usize,
        ref_dims: (usize, usize),
        cfg: &MatchConfig,
        index_map: Vec<usize>,
        sim_map: Vec<T>,
    ) -> Result<Self> {
        cfg.validate()?;
        if index_map.len() != height * width || sim_map.len() != height * width {
            return Err(Error::shape(format!(
                "{height}×{width} match grid with {} indices and {} scores",
                index_map.len(),
                sim_map.len()
            )));
        }
        let res = MatchResult {
            height,
            width,
            ref_height: ref_dims.0,
            ref_width: ref_dims.1,
            patch_size: cfg.patch_size,
            stride: cfg.stride,
            index_map,
            sim_map,
        };
        let n = res.candidate_count();
        if let Some(&bad) = res.index_map.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        Ok(res)
    }

    /// Indices (as exactly representable floats) and raw scores as two `H×W` tensors.
    pub fn to_tensors(&self) -> Result<(Tensor<f32>, Tensor<T>)> {
        if self.candidate_count() >= 1 << 24 {
            return Err(Error::invalid("candidate count exceeds exact f32 integer range"));
        }
        let idx = self.index_map.iter().map(|&i| i as f32).collect();
        Ok((
            Tensor::from_vec(&[self.height, self.width], idx)?,
            Tensor::from_vec(&[self.height, self.width], self.sim_map.clone())?,
        ))
    }

    pub fn from_tensors(
        index: &Tensor<f32>,
        sim: &Tensor<T>,
        ref_dims: (usize, usize),
        cfg: &MatchConfig,
    ) -> Result<Self> {
        let [h, w] = index.shape()[..] else {
            return Err(Error::shape(format!("index map must be H×W, got {:?}", index.shape())));
        };
        if sim.shape() != index.shape() {
            return Err(Error::shape("index and similarity maps differ in shape"));
        }
        let idx = index
            .data()
            .iter()
            .map(|&v| {
                if v < 0.0 || v.fract() != 0.0 {
                    Err(Error::invalid(format!("index value {v} is not a non-negative integer")))
                } else {
                    Ok(v as usize)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(h, w, ref_dims, cfg, idx, sim.data().to_vec())
    }

    pub fn save(&self, index_path: &std::path::Path, sim_path: &std::path::Path) -> Result<()> {
        let (idx, sim) = self.to_tensors()?;
        exchange::write_tensor(&idx, index_path)?;
        exchange::write_tensor(&sim, sim_path)
    }
}

fn check_pair<T: Scalar>(m_lr: &FeatureMap<T>, m_lref: &FeatureMap<T>, cfg: &MatchConfig) -> Result<()> {
    cfg.validate()?;
    if m_lr.channels() != m_lref.channels() {
        return Err(Error::shape(format!(
            "channel mismatch: input has {}, reference has {}",
            m_lr.channels(),
            m_lref.channels()
        )));
    }
    check_fits(m_lr, cfg, "input")?;
    check_fits(m_lref, cfg, "reference")
}

/// Normalized input patches (one per location) and normalized candidate patches.
fn prepared<T: Scalar>(m_lr: &FeatureMap<T>, m_lref: &FeatureMap<T>, cfg: &MatchConfig) -> Result<(Vec<T>, PatchSet<T>)> {
    let eps = T::from_f64_lossy(cfg.epsilon);
    let mut queries = centred_patches(m_lr, cfg.patch_size);
    let mut cands = extract_patches(m_lref, cfg)?;
    normalize_rows(&mut queries, cands.dim, eps);
    normalize_rows(&mut cands.data, cands.dim, eps);
    Ok((queries, cands))
}

fn finish<T: Scalar>(
    m_lr: &FeatureMap<T>,
    m_lref: &FeatureMap<T>,
    cfg: &MatchConfig,
    index_map: Vec<usize>,
    sim_map: Vec<T>,
) -> MatchResult<T> {
    MatchResult {
        height: m_lr.height(),
        width: m_lr.width(),
        ref_height: m_lref.height(),
        ref_width: m_lref.width(),
        patch_size: cfg.patch_size,
        stride: cfg.stride,
        index_map,
        sim_map,
    }
}

fn clamp_unit<T: Scalar>(s: T) -> T {
    s.max(-T::one()).min(T::one())
}

/// Exhaustive cosine matching; ties go to the smallest candidate index.
pub fn match_bruteforce<T: Scalar>(m_lr: &FeatureMap<T>, m_lref: &FeatureMap<T>, cfg: &MatchConfig) -> Result<MatchResult<T>> {
    check_pair(m_lr, m_lref, cfg)?;
    let (queries, cands) = prepared(m_lr, m_lref, cfg)?;
    let dim = cands.dim;
    let n = m_lr.height() * m_lr.width();
    let mut index_map = Vec::with_capacity(n);
    let mut sim_map = Vec::with_capacity(n);
    for q in queries.chunks_exact(dim) {
        let mut best = T::neg_infinity();
        let mut arg = 0;
        for j in 0..cands.count() {
            let p = cands.patch(j);
            let mut dot = T::zero();
            for d in 0..dim {
                dot += q[d] * p[d];
            }
            if dot > best {
                best = dot;
                arg = j;
            }
        }
        index_map.push(arg);
        sim_map.push(clamp_unit(best));
    }
    Ok(finish(m_lr, m_lref, cfg, index_map, sim_map))
}

/// Register tile: `MR` queries × `NR` candidates.
const MR: usize = 4;
const NR: usize = 8;
/// Shared-dimension block kept hot while sweeping all candidates.
const KC: usize = 256;

/// Candidates packed as strips of `NR`, each strip `dim × NR` contiguous; the
/// tail strip is zero-filled.
struct PackedCandidates<T> {
    count: usize,
    strips: usize,
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> PackedCandidates<T> {
    fn new(c: &PatchSet<T>) -> Self {
        let strips = c.count().div_ceil(NR);
        let mut data = vec![T::zero(); strips * c.dim * NR];
        for j in 0..c.count() {
            let (s, lane) = (j / NR, j % NR);
            let p = c.patch(j);
            let base = s * c.dim * NR;
            for d in 0..c.dim {
                data[base + d * NR + lane] = p[d];
            }
        }
        PackedCandidates { count: c.count(), strips, dim: c.dim, data }
    }
}

/// Adds the products over `d in k0..k1` of a packed query panel and a
/// candidate strip onto the running sums in `acc`, in increasing `d` order.
#[inline(always)]
fn micro_kernel<T: Scalar>(apanel: &[T], strip: &[T], k0: usize, k1: usize, acc: &mut [[T; NR]; MR]) {
    for d in k0..k1 {
        let a = &apanel[d * MR..d * MR + MR];
        let b = &strip[d * NR..d * NR + NR];
        for r in 0..MR {
            let ar = a[r];
            for c in 0..NR {
                acc[r][c] += ar * b[c];
            }
        }
    }
}

/// Scores one block of consecutive query rows against all candidates and
/// writes argmax / max into the output slices.
fn score_block<T: Scalar>(queries: &[T], packed: &PackedCandidates<T>, index_out: &mut [usize], sim_out: &mut [T]) {
    let dim = packed.dim;
    let nq = index_out.len();
    let panels = nq.div_ceil(MR);
    let width = packed.strips * NR;

    // Queries packed as panels of MR rows, each `dim × MR` contiguous.
    let mut apack = vec![T::zero(); panels * dim * MR];
    for q in 0..nq {
        let (p, lane) = (q / MR, q % MR);
        let src = &queries[q * dim..(q + 1) * dim];
        let base = p * dim * MR;
        for d in 0..dim {
            apack[base + d * MR + lane] = src[d];
        }
    }

    let mut scores = vec![T::zero(); panels * MR * width];
    let mut k0 = 0;
    while k0 < dim {
        let k1 = (k0 + KC).min(dim);
        for p in 0..panels {
            let apanel = &apack[p * dim * MR..(p + 1) * dim * MR];
            for s in 0..packed.strips {
                let strip = &packed.data[s * dim * NR..(s + 1) * dim * NR];
                let mut acc = [[T::zero(); NR]; MR];
                for r in 0..MR {
                    acc[r].copy_from_slice(&scores[(p * MR + r) * width + s * NR..][..NR]);
                }
                micro_kernel(apanel, strip, k0, k1, &mut acc);
                for r in 0..MR {
                    scores[(p * MR + r) * width + s * NR..][..NR].copy_from_slice(&acc[r]);
                }
            }
        }
        k0 = k1;
    }

    for q in 0..nq {
        let row = &scores[q * width..q * width + packed.count];
        let mut best = T::neg_infinity();
        let mut arg = 0;
        for (j, &s) in row.iter().enumerate() {
            if s > best {
                best = s;
                arg = j;
            }
        }
        index_out[q] = arg;
        sim_out[q] = clamp_unit(best);
    }
}

/// Query rows handled per task: whole rows of the input grid.
fn rows_per_task(width: usize) -> usize {
    (64usize.div_ceil(width)).max(1)
}

fn match_blocked<T: Scalar>(
    m_lr: &FeatureMap<T>,
    m_lref: &FeatureMap<T>,
    cfg: &MatchConfig,
    parallel: bool,
) -> Result<MatchResult<T>> {
    check_pair(m_lr, m_lref, cfg)?;
    let (queries, cands) = prepared(m_lr, m_lref, cfg)?;
    let packed = PackedCandidates::new(&cands);
    let dim = cands.dim;
    let n = m_lr.height() * m_lr.width();
    let block = rows_per_task(m_lr.width()) * m_lr.width();
    let mut index_map = vec![0usize; n];
    let mut sim_map = vec![T::zero(); n];

    let run = |(b, (idx, sim)): (usize, (&mut [usize], &mut [T]))| {
        let q0 = b * block;
        score_block(&queries[q0 * dim..(q0 + idx.len()) * dim], &packed, idx, sim);
    };

    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        index_map
            .par_chunks_mut(block)
            .zip(sim_map.par_chunks_mut(block))
            .enumerate()
            .for_each(run);
        return Ok(finish(m_lr, m_lref, cfg, index_map, sim_map));
    }
    let _ = parallel;
    index_map.chunks_mut(block).zip(sim_map.chunks_mut(block)).enumerate().for_each(run);
    Ok(finish(m_lr, m_lref, cfg, index_map, sim_map))
}

/// Blocked matrix-product matching, parallel over output rows on the ambient
/// thread pool. Same result as [`match_bruteforce`].
pub fn match_features<T: Scalar>(m_lr: &FeatureMap<T>, m_lref: &FeatureMap<T>, cfg: &MatchConfig) -> Result<MatchResult<T>> {
    match_blocked(m_lr, m_lref, cfg, true)
}

/// [`match_features`] on a dedicated pool of `workers` threads; `1` runs inline.
pub fn match_features_with_workers<T: Scalar>(
    m_lr: &FeatureMap<T>,
    m_lref: &FeatureMap<T>,
    cfg: &MatchConfig,
    workers: usize,
) -> Result<MatchResult<T>> {
    if workers <= 1 {
        return match_blocked(m_lr, m_lref, cfg, false);
    }
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        pool.install(|| match_blocked(m_lr, m_lref, cfg, true))
    }
    #[cfg(not(feature = "parallel"))]
    match_blocked(m_lr, m_lref, cfg, false)
}
