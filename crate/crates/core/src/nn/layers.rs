//! Parameterized layers over [`ModelParams`] and the textual layer description.

use std::fmt;

use rand::Rng;

use super::ops;
use super::params::{Grads, ModelParams, ParamGroup, ParamId};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// Layer kinds the networks are assembled from. Used for model manifests and
/// for validating critic stacks.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv2d { in_c: usize, out_c: usize, kernel: usize, stride: usize, pad: usize },
    Relu,
    LeakyRelu { slope: f64 },
    ResidualBlock { channels: usize, kernel: usize },
    PixelShuffle { factor: usize },
    Concat { first: usize, second: usize },
    ElementwiseAdd,
    ElementwiseMul,
}

impl LayerSpec {
    /// Whether the layer is affine or piecewise-linear in its input.
    pub fn is_piecewise_linear(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Relu | LayerSpec::LeakyRelu { .. })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::LeakyRelu { .. } => "leaky_relu",
            LayerSpec::ResidualBlock { .. } => "residual_block",
            LayerSpec::PixelShuffle { .. } => "pixel_shuffle",
            LayerSpec::Concat { .. } => "concat",
            LayerSpec::ElementwiseAdd => "elementwise_add",
            LayerSpec::ElementwiseMul => "elementwise_mul",
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv2d { in_c, out_c, kernel, stride, pad } => {
                write!(f, "conv2d in={in_c} out={out_c} k={kernel} stride={stride} pad={pad}")
            }
            LayerSpec::LeakyRelu { slope } => write!(f, "leaky_relu slope={slope}"),
            LayerSpec::ResidualBlock { channels, kernel } => write!(f, "residual_block c={channels} k={kernel}"),
            LayerSpec::PixelShuffle { factor } => write!(f, "pixel_shuffle r={factor}"),
            LayerSpec::Concat { first, second } => write!(f, "concat {first}+{second}"),
            other => f.write_str(other.kind()),
        }
    }
}

/// A convolution whose weight and bias live in a [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// Registers a `k×k` "same"-padded convolution.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        p: &mut ModelParams<T>,
        name: &str,
        group: ParamGroup,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let (w, b) = p.add_conv(name, group, out_c, in_c, k, rng);
        Conv { w, b, stride, pad: k / 2 }
    }

    pub fn forward<T: Scalar>(&self, p: &ModelParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv2d_forward(x, p.get(self.w), Some(p.get(self.b)), self.stride, self.pad)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward<T: Scalar>(&self, p: &ModelParams<T>, x: &Tensor<T>, gy: &Tensor<T>, grads: &mut Grads<T>) -> Result<Tensor<T>> {
        let g = ops::conv2d_backward(x, p.get(self.w), gy, self.stride, self.pad)?;
        grads.acc(self.w, &g.w)?;
        grads.acc(self.b, &g.b)?;
        Ok(g.x)
    }

    pub fn spec<T: Scalar>(&self, p: &ModelParams<T>) -> LayerSpec {
        let s = p.get(self.w).shape();
        LayerSpec::Conv2d { in_c: s[1], out_c: s[0], kernel: s[2], stride: self.stride, pad: self.pad }
    }
}

pub const RESIDUAL_INIT_SCALE: f64 = 0.1;

/// `y = x + conv₂(relu(conv₁(x)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResBlock {
    pub conv1: Conv,
    pub conv2: Conv,
}

/// Forward intermediates of a [`ResBlock`].
#[derive(Debug, Clone)]
pub struct ResTrace<T: Scalar> {
    x: Tensor<T>,
    h: Tensor<T>,
    a: Tensor<T>,
}

impl ResBlock {
    /// The second convolution starts at [`RESIDUAL_INIT_SCALE`] of its He-normal draw so
    /// that deep stacks begin close to the identity.
    pub fn new<T: Scalar>(p: &mut ModelParams<T>, name: &str, group: ParamGroup, channels: usize, rng: &mut impl Rng) -> Self {
        let conv1 = Conv::new(p, &format!("{name}.conv1"), group, channels, channels, 3, 1, rng);
        let conv2 = Conv::new(p, &format!("{name}.conv2"), group, channels, channels, 3, 1, rng);
        p.get_mut(conv2.w).scale(T::from_f64_lossy(RESIDUAL_INIT_SCALE));
        ResBlock { conv1, conv2 }
    }

    pub fn spec<T: Scalar>(&self, p: &ModelParams<T>) -> LayerSpec {
        let s = p.get(self.conv1.w).shape();
        LayerSpec::ResidualBlock { channels: s[0], kernel: s[2] }
    }
}

pub fn residual_block_forward<T: Scalar>(blk: &ResBlock, p: &ModelParams<T>, x: &Tensor<T>) -> Result<(Tensor<T>, ResTrace<T>)> {
    let (c, ..) = x.chw()?;
    let expected = p.get(blk.conv1.w).shape()[1];
    if c != expected || p.get(blk.conv2.w).shape()[0] != c {
        return Err(crate::error::Error::shape(format!("residual block expects {expected} channels, got {c}")));
    }
    let h = blk.conv1.forward(p, x)?;
    let a = ops::relu(&h);
    let mut y = blk.conv2.forward(p, &a)?;
    y.add_assign(x)?;
    Ok((y, ResTrace { x: x.clone(), h, a }))
}

pub fn residual_block_backward<T: Scalar>(
    blk: &ResBlock,
    p: &ModelParams<T>,
    trace: &ResTrace<T>,
    gy: &Tensor<T>,
    grads: &mut Grads<T>,
) -> Result<Tensor<T>> {
    let ga = blk.conv2.backward(p, &trace.a, gy, grads)?;
    let gh = ops::relu_backward(&trace.h, &ga)?;
    let mut gx = blk.conv1.backward(p, &trace.x, &gh, grads)?;
    gx.add_assign(gy)?;
    Ok(gx)
}
