//! Minimal differentiable network core: explicit forward/backward layers,
//! a generator, a critic and Adam.

pub mod checkpoint;
pub mod critic;
pub mod generator;
pub mod layers;
pub mod ops;
pub mod params;

#[cfg(test)]
pub(crate) mod testutil;

pub use critic::Critic;
pub use generator::{Generator, GeneratorConfig, GeneratorTrace};
pub use layers::{residual_block_backward, residual_block_forward, LayerSpec, ResBlock};
pub use ops::{conv2d_backward, conv2d_forward, pixel_shuffle, pixel_unshuffle};
pub use params::{AdamConfig, Grads, ModelParams, ParamGroup, ParamId};
