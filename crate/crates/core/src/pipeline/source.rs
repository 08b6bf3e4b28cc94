//! Feature providers: the built-in extractor or an external dump directory.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::features::{FallbackExtractor, FeatureMap, MATCH_LEVEL};
use crate::tensor::ImageTensor;

use super::config::FeatureSourceConfig;

#[derive(Debug, Clone)]
pub enum FeatureSource {
    Fallback(FallbackExtractor<f32>),
    External { dir: PathBuf, layer: String },
}

impl FeatureSource {
    pub fn from_config(cfg: &FeatureSourceConfig) -> Self {
        match cfg {
            FeatureSourceConfig::Fallback { seed } => FeatureSource::Fallback(FallbackExtractor::new(*seed)),
            FeatureSourceConfig::External { dir, layer } => FeatureSource::External { dir: dir.clone(), layer: layer.clone() },
        }
    }

    /// Path of the dump expected for an image stem.
    pub fn dump_path(dir: &Path, stem: &str, layer: &str) -> PathBuf {
        dir.join(format!("{stem}.{layer}.tnsr"))
    }

    /// Matching-level features of `img`. External sources ignore the pixels
    /// and load the dump named after `stem`.
    pub fn features(&self, img: &ImageTensor, stem: &str) -> Result<FeatureMap<f32>> {
        match self {
            FeatureSource::Fallback(ex) => ex.extract_match_level(img),
            FeatureSource::External { dir, layer } => {
                let path = Self::dump_path(dir, stem, layer);
                if !path.is_file() {
                    return Err(Error::InvalidArgument(format!("missing feature dump {}", path.display())));
                }
                FeatureMap::load(&path, layer.as_str())
            }
        }
    }

    pub fn level(&self) -> &str {
        match self {
            FeatureSource::Fallback(_) => MATCH_LEVEL,
            FeatureSource::External { layer, .. } => layer,
        }
    }

    pub fn is_external(&self) -> bool {
        matches!(self, FeatureSource::External { .. })
    }

    /// Stable description used in cache keys.
    pub fn describe(&self) -> String {
        match self {
            FeatureSource::Fallback(ex) => format!("fallback:{}", ex.seed()),
            FeatureSource::External { dir, layer } => format!("external:{}:{layer}", dir.display()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn external_and_fallback_agree_on_the_same_activations() {
        let img = ImageTensor::from_clamped(16, 16, 3, (0..768).map(|i| (i % 17) as f32 / 16.0).collect()).unwrap();
        let fb = FeatureSource::from_config(&FeatureSourceConfig::Fallback { seed: 3 });
        let direct = fb.features(&img, "ignored").unwrap();
        let dir = tempfile::tempdir().unwrap();
        direct.save(FeatureSource::dump_path(dir.path(), "img", "relu3_1")).unwrap();
        let ext = FeatureSource::from_config(&FeatureSourceConfig::External { dir: dir.path().into(), layer: "relu3_1".into() });
        let loaded = ext.features(&img, "img").unwrap();
        assert_eq!(loaded.tensor(), direct.tensor());
        assert!(ext.features(&img, "other").is_err());
    }
}
