//! Reference-conditioned 4× super-resolution by patch-level texture transfer.
//!
//! The building blocks are usable on their own: feature extraction and the
//! `.tnsr` exchange format, normalized patch matching, texture swapping, the
//! losses and a small reverse-mode network stack. The `pipeline` feature adds
//! the end-to-end precompute, training, inference and evaluation drivers.

pub mod error;
pub mod exchange;
pub mod features;
pub mod imaging;
pub mod losses;
pub mod matcher;
pub mod metrics;
pub mod nn;
#[cfg(feature = "pipeline")]
pub mod pipeline;
pub mod swapper;
pub mod tensor;

pub use error::{Error, FormatError, Result};
pub use features::{FallbackExtractor, FeatureMap, FeaturePyramid};
pub use matcher::{MatchConfig, MatchResult};
pub use tensor::{Dtype, ImageTensor, Scalar, Tensor};
