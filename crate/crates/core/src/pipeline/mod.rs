//! End-to-end drivers: texture precomputation, training, inference and evaluation.

pub mod config;
pub mod evaluate;
pub mod infer;
pub mod manifest;
pub mod model;
pub mod precompute;
pub mod source;
pub mod train;

pub use config::{FeatureSourceConfig, RunConfig, UpscalerKind};
pub use evaluate::{evaluate, MetricRow, MetricsTable};
pub use infer::{infer, Inference};
pub use manifest::{pair_id, Level, PairManifest, PairRecord};
pub use model::{load_generator, save_generator};
pub use precompute::{precompute_mt, transfer_texture, FeatureStems, PairImages, PrecomputeReport, Texture};
pub use source::FeatureSource;
pub use train::{train, LossRow, TrainReport};
