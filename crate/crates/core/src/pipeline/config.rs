//! Run configuration and its `key = value` text form.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::matcher::MatchConfig;
use crate::nn::GeneratorConfig;
use crate::swapper::WeightMode;

/// Where texture-extractor activations come from.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSourceConfig {
    /// Built-in seeded extractor.
    Fallback { seed: u64 },
    /// `<dir>/<stem>.<layer>.tnsr` files written by an external dumper.
    External { dir: PathBuf, layer: String },
}

/// Image upscaler used by scale adjustment at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpscalerKind {
    Bicubic,
    /// The trained generator with an empty texture map. Experimental.
    Generator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub weights: LossWeights,
    pub lr: f64,
    pub pretrain_epochs: usize,
    /// Epoch count including the pretraining epochs.
    pub total_epochs: usize,
    pub lr_decay: f64,
    /// Decay period in epochs, counted from the first full-objective epoch.
    pub lr_decay_every: usize,
    pub batch_size: usize,
    pub critic_steps: usize,
    /// Optional cap on generator steps.
    pub max_steps: Option<usize>,
    pub matching: MatchConfig,
    pub weight_mode: WeightMode,
    pub features: FeatureSourceConfig,
    /// Seed of the fallback extractor used inside the perceptual and texture losses.
    pub loss_extractor_seed: u64,
    pub gp_enabled: bool,
    pub gp_weight: f64,
    /// Critic weight clip used when the gradient penalty is disabled.
    pub clip: f64,
    pub generator: GeneratorConfig,
    pub critic_width: usize,
    pub upscaler: UpscalerKind,
    pub cache_dir: PathBuf,
    pub seed: u64,
    /// Matcher threads; 0 uses every available core.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            weights: LossWeights::default(),
            lr: 1e-4,
            pretrain_epochs: 5,
            total_epochs: 25,
            lr_decay: 0.1,
            lr_decay_every: 50,
            batch_size: 4,
            critic_steps: 1,
            max_steps: None,
            matching: MatchConfig::default(),
            weight_mode: WeightMode::MultiplySim,
            features: FeatureSourceConfig::Fallback { seed: 0 },
            loss_extractor_seed: 0,
            gp_enabled: true,
            gp_weight: 10.0,
            clip: 0.01,
            generator: GeneratorConfig::default(),
            critic_width: 32,
            upscaler: UpscalerKind::Bicubic,
            cache_dir: PathBuf::from("cache"),
            seed: 0,
            workers: 0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected a boolean, got `{v}`"))),
    }
}

impl RunConfig {
    /// The paper-scale schedule: 5 pretraining epochs then 100 full-objective epochs.
    pub fn full_schedule() -> Self {
        RunConfig { total_epochs: 105, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.matching.validate()?;
        let positive = [("lr", self.lr), ("lr_decay", self.lr_decay), ("gp_weight", self.gp_weight), ("clip", self.clip)];
        for (k, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("`{k}` must be positive, got {v}")));
            }
        }
        if self.pretrain_epochs > self.total_epochs {
            return Err(Error::Config(format!(
                "pretrain_epochs {} exceeds total_epochs {}",
                self.pretrain_epochs, self.total_epochs
            )));
        }
        for (k, v) in [
            ("batch_size", self.batch_size),
            ("critic_steps", self.critic_steps),
            ("lr_decay_every", self.lr_decay_every),
            ("width", self.generator.width),
            ("critic_width", self.critic_width),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("`{k}` must be at least 1")));
            }
        }
        Ok(())
    }

    /// Learning rate for a 0-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.pretrain_epochs {
            return self.lr;
        }
        let periods = (epoch - self.pretrain_epochs) / self.lr_decay_every;
        self.lr * self.lr_decay.powi(periods as i32)
    }

    /// Applies one `key = value` setting. Relative paths resolve against `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let v = value.trim();
        let path = |v: &str| if Path::new(v).is_absolute() { PathBuf::from(v) } else { base.join(v) };
        match key.trim() {
            "alpha" => self.weights.alpha = parse_num(key, v)?,
            "beta" => self.weights.beta = parse_num(key, v)?,
            "lambda" => self.weights.lambda = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "pretrain_epochs" => self.pretrain_epochs = parse_num(key, v)?,
            "total_epochs" => self.total_epochs = parse_num(key, v)?,
            "lr_decay" => self.lr_decay = parse_num(key, v)?,
            "lr_decay_every" => self.lr_decay_every = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "critic_steps" => self.critic_steps = parse_num(key, v)?,
            "max_steps" => self.max_steps = if v == "none" { None } else { Some(parse_num(key, v)?) },
            "patch_size" => self.matching.patch_size = parse_num(key, v)?,
            "stride" => self.matching.stride = parse_num(key, v)?,
            "epsilon" => self.matching.epsilon = parse_num(key, v)?,
            "weight_mode" => {
                self.weight_mode = match v {
                    "sim" => WeightMode::MultiplySim,
                    "unit" => WeightMode::Unit,
                    _ => return Err(Error::Config(format!("`weight_mode` is `sim` or `unit`, got `{v}`"))),
                }
            }
            "features" => {
                self.features = match v {
                    "fallback" => FeatureSourceConfig::Fallback { seed: self.fallback_seed().unwrap_or(0) },
                    "external" => FeatureSourceConfig::External { dir: base.to_path_buf(), layer: "relu3_1".into() },
                    _ => return Err(Error::Config(format!("`features` is `fallback` or `external`, got `{v}`"))),
                }
            }
            "fallback_seed" => {
                let seed = parse_num(key, v)?;
                self.features = FeatureSourceConfig::Fallback { seed };
            }
            "feature_dir" | "feature_layer" => {
                let (mut dir, mut layer) = match &self.features {
                    FeatureSourceConfig::External { dir, layer } => (dir.clone(), layer.clone()),
                    FeatureSourceConfig::Fallback { .. } => (base.to_path_buf(), "relu3_1".to_string()),
                };
                if key.trim() == "feature_dir" {
                    dir = path(v);
                } else {
                    layer = v.to_string();
                }
                self.features = FeatureSourceConfig::External { dir, layer };
            }
            "loss_extractor_seed" => self.loss_extractor_seed = parse_num(key, v)?,
            "gp" => self.gp_enabled = parse_bool(key, v)?,
            "gp_weight" => self.gp_weight = parse_num(key, v)?,
            "clip" => self.clip = parse_num(key, v)?,
            "width" => self.generator.width = parse_num(key, v)?,
            "content_blocks" => self.generator.content_blocks = parse_num(key, v)?,
            "transfer_blocks" => self.generator.transfer_blocks = parse_num(key, v)?,
            "critic_width" => self.critic_width = parse_num(key, v)?,
            "upscaler" => {
                self.upscaler = match v {
                    "bicubic" => UpscalerKind::Bicubic,
                    "generator" => UpscalerKind::Generator,
                    _ => return Err(Error::Config(format!("`upscaler` is `bicubic` or `generator`, got `{v}`"))),
                }
            }
            "cache_dir" => self.cache_dir = path(v),
            "seed" => self.seed = parse_num(key, v)?,
            "workers" => self.workers = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    fn fallback_seed(&self) -> Option<u64> {
        match self.features {
            FeatureSourceConfig::Fallback { seed } => Some(seed),
            FeatureSourceConfig::External { .. } => None,
        }
    }

    /// Parses `key = value` lines; `#` starts a comment. Unset keys keep their defaults.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = RunConfig { cache_dir: base.join("cache"), ..Default::default() };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got `{line}`", i + 1)))?;
            cfg.set(k, v, base).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// The canonical text form; parsing it yields the same configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("alpha", self.weights.alpha.to_string());
        kv("beta", self.weights.beta.to_string());
        kv("lambda", self.weights.lambda.to_string());
        kv("lr", self.lr.to_string());
        kv("pretrain_epochs", self.pretrain_epochs.to_string());
        kv("total_epochs", self.total_epochs.to_string());
        kv("lr_decay", self.lr_decay.to_string());
        kv("lr_decay_every", self.lr_decay_every.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("critic_steps", self.critic_steps.to_string());
        kv("max_steps", self.max_steps.map_or("none".into(), |n| n.to_string()));
        kv("patch_size", self.matching.patch_size.to_string());
        kv("stride", self.matching.stride.to_string());
        kv("epsilon", self.matching.epsilon.to_string());
        kv("weight_mode", if self.weight_mode == WeightMode::Unit { "unit" } else { "sim" }.into());
        match &self.features {
            FeatureSourceConfig::Fallback { seed } => kv("fallback_seed", seed.to_string()),
            FeatureSourceConfig::External { dir, layer } => {
                kv("feature_dir", dir.display().to_string());
                kv("feature_layer", layer.clone());
            }
        }
        kv("loss_extractor_seed", self.loss_extractor_seed.to_string());
        kv("gp", self.gp_enabled.to_string());
        kv("gp_weight", self.gp_weight.to_string());
        kv("clip", self.clip.to_string());
        kv("width", self.generator.width.to_string());
        kv("content_blocks", self.generator.content_blocks.to_string());
        kv("transfer_blocks", self.generator.transfer_blocks.to_string());
        kv("critic_width", self.critic_width.to_string());
        kv("upscaler", if self.upscaler == UpscalerKind::Generator { "generator" } else { "bicubic" }.into());
        kv("cache_dir", self.cache_dir.display().to_string());
        kv("seed", self.seed.to_string());
        kv("workers", self.workers.to_string());
        s
    }
}
