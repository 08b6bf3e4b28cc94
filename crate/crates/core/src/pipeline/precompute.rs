//! Offline texture maps: scale adjustment, feature extraction, matching and
//! swapping for every manifest pair, cached on disk by content hash.

use std::fs;
use std::path::{Path, PathBuf};

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exchange::{read_tensor, write_tensor};
use crate::features::FeatureMap;
use crate::imaging::{bicubic_resize, read_png, write_png, Scale};
use crate::matcher::{match_features, match_features_with_workers, MatchResult};
use crate::swapper::{scale_adjust, swap_texture, SwapConfig, Upscaler, WeightMode};
use crate::tensor::{ImageTensor, Tensor};

use super::config::RunConfig;
use super::manifest::{PairManifest, PairRecord};
use super::source::FeatureSource;

/// Decoded images of one manifest record.
#[derive(Debug, Clone)]
pub struct PairImages {
    pub hr: ImageTensor,
    pub lr: ImageTensor,
    pub reference: ImageTensor,
}

fn read_image(path: &Path) -> Result<ImageTensor> {
    Ok(read_png(path)?.to_rgb())
}

/// Reads a record and derives the input by 1/4 bicubic downscaling.
pub fn load_pair(rec: &PairRecord) -> Result<PairImages> {
    let hr = read_image(&rec.hr_path)?;
    let reference = read_image(&rec.ref_path)?;
    let lr = bicubic_resize(&hr, Scale::down(4)).map_err(|e| Error::Image {
        path: rec.hr_path.clone(),
        msg: format!("cannot derive the 4× smaller input: {e}"),
    })?;
    Ok(PairImages { hr, lr, reference })
}

/// File stems under which an external source finds the three feature maps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureStems {
    pub lr_up: String,
    pub ref_blur: String,
    pub reference: String,
}

impl FeatureStems {
    pub fn for_key(key: &str) -> Self {
        FeatureStems { lr_up: format!("{key}_lrup"), ref_blur: format!("{key}_refblur"), reference: format!("{key}_ref") }
    }
}

/// A texture map on the input grid and the correspondence it came from.
#[derive(Debug, Clone)]
pub struct Texture {
    pub m_t: FeatureMap<f32>,
    pub matched: MatchResult<f32>,
}

impl Texture {
    /// Raw similarity scores as a `1×H×W` tensor.
    pub fn sim_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec_unchecked(&[1, self.matched.height(), self.matched.width()], self.matched.sim_map().to_vec())
            .expect("sim map matches its grid")
    }
}

/// Scale adjustment → features → match → swap.
pub fn transfer_texture(
    lr: &ImageTensor,
    reference: &ImageTensor,
    source: &FeatureSource,
    cfg: &RunConfig,
    upscaler: &dyn Upscaler,
    stems: &FeatureStems,
) -> Result<Texture> {
    let (lr_up, ref_blur) = scale_adjust(lr, reference, upscaler)?;
    let m_lr = source.features(&lr_up, &stems.lr_up)?;
    let m_lref = source.features(&ref_blur, &stems.ref_blur)?;
    let m_ref = source.features(reference, &stems.reference)?;
    if m_lr.channels() != m_ref.channels() || (m_lref.height(), m_lref.width()) != (m_ref.height(), m_ref.width()) {
        return Err(Error::shape(format!(
            "feature maps disagree: input {}×{}×{}, blurred reference {}×{}×{}, reference {}×{}×{}",
            m_lr.channels(),
            m_lr.height(),
            m_lr.width(),
            m_lref.channels(),
            m_lref.height(),
            m_lref.width(),
            m_ref.channels(),
            m_ref.height(),
            m_ref.width()
        )));
    }
    if (m_lr.height(), m_lr.width()) != (lr.height(), lr.width()) {
        return Err(Error::shape(format!(
            "features of the upscaled input are {}×{}, expected the {}×{} input grid",
            m_lr.height(),
            m_lr.width(),
            lr.height(),
            lr.width()
        )));
    }
    let matched = if cfg.workers == 0 {
        match_features(&m_lr, &m_lref, &cfg.matching)?
    } else {
        match_features_with_workers(&m_lr, &m_lref, &cfg.matching, cfg.workers)?
    };
    let swap_cfg = SwapConfig { weight_mode: cfg.weight_mode, ..SwapConfig::from(&cfg.matching) };
    let m_t = swap_texture(&m_ref, &matched, &swap_cfg)?;
    Ok(Texture { m_t, matched })
}

/// Content hash of the input, the reference and every setting that affects the texture map.
pub fn cache_key(lr: &ImageTensor, reference: &ImageTensor, source: &FeatureSource, cfg: &RunConfig) -> String {
    let mut h = Sha256::new();
    h.update(b"reftex texture v1\0");
    for img in [lr, reference] {
        for d in [img.height(), img.width(), img.channels()] {
            h.update((d as u64).to_le_bytes());
        }
        for v in img.data() {
            h.update(v.to_le_bytes());
        }
    }
    let m = &cfg.matching;
    let mode = match cfg.weight_mode {
        WeightMode::MultiplySim => "sim",
        WeightMode::Unit => "unit",
    };
    h.update(format!("{}|{}|{:e}|{mode}|{}", m.patch_size, m.stride, m.epsilon, source.describe()).as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub key: String,
    pub mt_path: PathBuf,
    pub ms_path: PathBuf,
}

impl CacheEntry {
    pub fn new(dir: &Path, key: &str) -> Self {
        CacheEntry { key: key.to_string(), mt_path: dir.join(format!("{key}.mt.tnsr")), ms_path: dir.join(format!("{key}.ms.tnsr")) }
    }

    /// `(M_t, raw similarity 1×H×W)` if both files decode and agree in grid size.
    pub fn load(&self) -> Result<(FeatureMap<f32>, Tensor<f32>)> {
        let mt = read_tensor(&self.mt_path)?.exact::<f32>()?;
        let ms = read_tensor(&self.ms_path)?.exact::<f32>()?;
        let m_t = FeatureMap::new(mt, "texture")?;
        if ms.shape() != [1, m_t.height(), m_t.width()] {
            return Err(Error::shape(format!("cached similarity {:?} does not fit texture {:?}", ms.shape(), m_t.tensor().shape())));
        }
        Ok((m_t, ms))
    }

    fn store(&self, tex: &Texture) -> Result<()> {
        // Write-then-rename so concurrent or interrupted runs never leave half an entry.
        let tmp = |p: &Path| p.with_extension(format!("tmp{}", std::process::id()));
        let (ms_tmp, mt_tmp) = (tmp(&self.ms_path), tmp(&self.mt_path));
        write_tensor(&tex.sim_tensor(), &ms_tmp)?;
        write_tensor(tex.m_t.tensor(), &mt_tmp)?;
        fs::rename(&ms_tmp, &self.ms_path).map_err(|e| Error::io(&self.ms_path, e))?;
        fs::rename(&mt_tmp, &self.mt_path).map_err(|e| Error::io(&self.mt_path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PairStatus {
    Hit,
    Computed,
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct PairOutcome {
    pub index: usize,
    pub entry: Option<CacheEntry>,
    pub status: PairStatus,
}

#[derive(Debug, Clone)]
pub struct PrecomputeReport {
    pub outcomes: Vec<PairOutcome>,
}

impl PrecomputeReport {
    pub fn count(&self, f: impl Fn(&PairStatus) -> bool) -> usize {
        self.outcomes.iter().filter(|o| f(&o.status)).count()
    }

    pub fn hits(&self) -> usize {
        self.count(|s| *s == PairStatus::Hit)
    }

    pub fn computed(&self) -> usize {
        self.count(|s| *s == PairStatus::Computed)
    }

    pub fn failures(&self) -> Vec<(usize, &str)> {
        self.outcomes
            .iter()
            .filter_map(|o| match &o.status {
                PairStatus::Failed(m) => Some((o.index, m.as_str())),
                _ => None,
            })
            .collect()
    }
}

fn write_derived(dir: &Path, key: &str, lr: &ImageTensor, reference: &ImageTensor, upscaler: &dyn Upscaler) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (lr_up, ref_blur) = scale_adjust(lr, reference, upscaler)?;
    let stems = FeatureStems::for_key(key);
    write_png(&lr_up, dir.join(format!("{}.png", stems.lr_up)))?;
    write_png(&ref_blur, dir.join(format!("{}.png", stems.ref_blur)))?;
    write_png(reference, dir.join(format!("{}.png", stems.reference)))
}

/// Cache entry for one pair, computing it unless a valid one exists.
pub fn ensure_texture(images: &PairImages, source: &FeatureSource, cfg: &RunConfig) -> Result<(CacheEntry, bool)> {
    let key = cache_key(&images.lr, &images.reference, source, cfg);
    let entry = CacheEntry::new(&cfg.cache_dir, &key);
    if entry.load().is_ok() {
        return Ok((entry, false));
    }
    let upscaler = crate::swapper::Bicubic;
    if source.is_external() {
        // Leave the derived images where an external dumper can find them.
        write_derived(&cfg.cache_dir.join("derived"), &key, &images.lr, &images.reference, &upscaler)?;
    }
    let tex = transfer_texture(&images.lr, &images.reference, source, cfg, &upscaler, &FeatureStems::for_key(&key))?;
    entry.store(&tex)?;
    Ok((entry, true))
}

/// Populates the cache for every pair. Failures are recorded per pair and do not stop the run.
pub fn precompute_mt(manifest: &PairManifest, cfg: &RunConfig) -> Result<PrecomputeReport> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.cache_dir).map_err(|e| Error::io(&cfg.cache_dir, e))?;
    let source = FeatureSource::from_config(&cfg.features);
    let run = |(index, rec): (usize, &PairRecord)| {
        let result = load_pair(rec).and_then(|imgs| ensure_texture(&imgs, &source, cfg));
        match result {
            Ok((entry, computed)) => {
                PairOutcome { index, entry: Some(entry), status: if computed { PairStatus::Computed } else { PairStatus::Hit } }
            }
            Err(e) => PairOutcome { index, entry: None, status: PairStatus::Failed(e.to_string()) },
        }
    };
    #[cfg(feature = "parallel")]
    let outcomes = manifest.records.par_iter().enumerate().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let outcomes = manifest.records.iter().enumerate().map(run).collect();
    Ok(PrecomputeReport { outcomes })
}
