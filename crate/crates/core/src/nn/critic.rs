//! Piecewise-linear critic: strided convolutions and leaky ReLUs followed by a
//! global mean. No normalization layers, so with activation masks frozen the
//! critic is affine in its input and its input gradient is an exact linear
//! function of the weights; the gradient penalty exploits this.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Conv, LayerSpec};
use super::ops;
use super::params::{Grads, ModelParams, ParamGroup};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const LEAK: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
enum CriticLayer {
    Conv(Conv),
    Relu,
    LeakyRelu(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Critic<T: Scalar = f32> {
    params: ModelParams<T>,
    layers: Vec<CriticLayer>,
    in_channels: usize,
}

/// Inputs of every layer from one forward pass, plus the output shape.
#[derive(Debug, Clone)]
pub struct CriticTrace<T: Scalar> {
    inputs: Vec<Tensor<T>>,
    out_shape: Vec<usize>,
}

impl<T: Scalar> Critic<T> {
    /// Builds a critic from a layer list; only conv / relu / leaky-ReLU are admitted.
    pub fn from_specs(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();
        let mut layers = Vec::with_capacity(specs.len());
        let mut channels: Option<usize> = None;
        let mut in_channels = None;
        for (i, spec) in specs.iter().enumerate() {
            if !spec.is_piecewise_linear() {
                return Err(Error::NotPiecewiseLinear(spec.kind().to_string()));
            }
            match *spec {
                LayerSpec::Conv2d { in_c, out_c, kernel, stride, pad } => {
                    if let Some(c) = channels {
                        if c != in_c {
                            return Err(Error::shape(format!("critic layer {i} expects {in_c} channels, previous layer gives {c}")));
                        }
                    }
                    in_channels.get_or_insert(in_c);
                    let (w, b) = params.add_conv(&format!("critic.conv{i}"), ParamGroup::Critic, out_c, in_c, kernel, &mut rng);
                    layers.push(CriticLayer::Conv(Conv { w, b, stride, pad }));
                    channels = Some(out_c);
                }
                LayerSpec::Relu => layers.push(CriticLayer::Relu),
                LayerSpec::LeakyRelu { slope } => layers.push(CriticLayer::LeakyRelu(slope)),
                _ => unreachable!("filtered above"),
            }
        }
        let in_channels = in_channels.ok_or_else(|| Error::invalid("critic needs at least one convolution"))?;
        Ok(Critic { params, layers, in_channels })
    }

    /// `conv(k3,s2) → lrelu → conv(k3,s2) → lrelu → conv(k1)` to one channel.
    pub fn standard(in_channels: usize, width: usize, seed: u64) -> Self {
        let specs = [
            LayerSpec::Conv2d { in_c: in_channels, out_c: width, kernel: 3, stride: 2, pad: 1 },
            LayerSpec::LeakyRelu { slope: LEAK },
            LayerSpec::Conv2d { in_c: width, out_c: 2 * width, kernel: 3, stride: 2, pad: 1 },
            LayerSpec::LeakyRelu { slope: LEAK },
            LayerSpec::Conv2d { in_c: 2 * width, out_c: 1, kernel: 1, stride: 1, pad: 0 },
        ];
        Self::from_specs(&specs, seed).expect("standard critic is well formed")
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<T> {
        &mut self.params
    }

    /// Copy in another precision. Optimizer moments are dropped.
    pub fn cast<U: Scalar>(&self) -> Critic<U> {
        let mut params = ModelParams::<U>::new();
        for q in self.params.params() {
            params.add(q.name.clone(), q.group, q.value.cast());
        }
        Critic { params, layers: self.layers.clone(), in_channels: self.in_channels }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| match l {
                CriticLayer::Conv(c) => c.spec(&self.params),
                CriticLayer::Relu => LayerSpec::Relu,
                CriticLayer::LeakyRelu(s) => LayerSpec::LeakyRelu { slope: *s },
            })
            .collect()
    }

    /// Rebuilds the layer stack against a new parameter set with identical names and shapes.
    pub fn set_params(&mut self, params: ModelParams<T>) -> Result<()> {
        if params.len() != self.params.len()
            || params.params().iter().zip(self.params.params()).any(|(a, b)| a.name != b.name || a.value.shape() != b.value.shape())
        {
            return Err(Error::shape("critic parameters do not match the layer stack"));
        }
        self.params = params;
        Ok(())
    }

    /// Scalar score: mean of the final layer's output.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(T, CriticTrace<T>)> {
        let (c, ..) = x.chw()?;
        if c != self.in_channels {
            return Err(Error::shape(format!("critic expects {} channels, got {c}", self.in_channels)));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let next = match layer {
                CriticLayer::Conv(conv) => conv.forward(&self.params, &cur)?,
                CriticLayer::Relu => ops::relu(&cur),
                CriticLayer::LeakyRelu(s) => ops::leaky_relu(&cur, T::from_f64_lossy(*s)),
            };
            inputs.push(cur);
            cur = next;
        }
        let n = T::from_usize(cur.len()).unwrap();
        let score = cur.sum() / n;
        Ok((score, CriticTrace { inputs, out_shape: cur.shape().to_vec() }))
    }

    pub fn score(&self, x: &Tensor<T>) -> Result<T> {
        Ok(self.forward(x)?.0)
    }

    /// Parameter and input gradients of `d_score · D(x)`.
    pub fn backward(&self, trace: &CriticTrace<T>, d_score: T) -> Result<(Grads<T>, Tensor<T>)> {
        let mut grads = self.params.zero_grads();
        let n = T::from_usize(trace.out_shape.iter().product()).unwrap();
        let mut g = Tensor::full(&trace.out_shape, d_score / n);
        for (layer, x) in self.layers.iter().zip(&trace.inputs).rev() {
            g = match layer {
                CriticLayer::Conv(conv) => conv.backward(&self.params, x, &g, &mut grads)?,
                CriticLayer::Relu => ops::relu_backward(x, &g)?,
                CriticLayer::LeakyRelu(s) => ops::leaky_relu_backward(x, &g, T::from_f64_lossy(*s))?,
            };
        }
        Ok((grads, g))
    }

    /// `∇ₓ D(x)` from a trace.
    pub fn input_gradient(&self, trace: &CriticTrace<T>) -> Result<Tensor<T>> {
        Ok(self.backward(trace, T::one())?.1)
    }

    /// Value of `(‖∇ₓD(x)‖₂ − 1)²` at `x` and its exact parameter gradient.
    ///
    /// The input gradient is the reverse chain `u ← Tᵢ(u)` with `Tᵢ` either a
    /// transposed convolution or a frozen activation mask. Its adjoint with
    /// respect to the weights runs the same layers forward on `v = ∂P/∂g`
    /// without biases, collecting `weight_grad(a, u)` at every convolution.
    pub fn penalty_and_grads(&self, x: &Tensor<T>) -> Result<(T, Grads<T>)> {
        let (_, trace) = self.forward(x)?;
        let n = T::from_usize(trace.out_shape.iter().product()).unwrap();

        // Reverse chain, remembering the upstream `u` entering every layer.
        let mut upstream = vec![Tensor::zeros(&[0]); self.layers.len()];
        let mut u = Tensor::full(&trace.out_shape, T::one() / n);
        for (i, (layer, xin)) in self.layers.iter().zip(&trace.inputs).enumerate().rev() {
            let next = match layer {
                CriticLayer::Conv(conv) => {
                    ops::conv2d_backward_input(&u, self.params.get(conv.w), xin.shape(), conv.stride, conv.pad)?
                }
                CriticLayer::Relu => ops::relu_backward(xin, &u)?,
                CriticLayer::LeakyRelu(s) => ops::leaky_relu_backward(xin, &u, T::from_f64_lossy(*s))?,
            };
            upstream[i] = u;
            u = next;
        }
        let g = u;
        let norm = g.data().iter().map(|&v| v * v).sum::<T>().sqrt();
        let one = T::one();
        let value = (norm - one) * (norm - one);

        let mut grads = self.params.zero_grads();
        if norm == T::zero() {
            return Ok((value, grads));
        }
        let coef = (norm - one) * T::from_f64_lossy(2.0) / norm;
        let mut a = g.map(|v| v * coef);
        for (i, (layer, xin)) in self.layers.iter().zip(&trace.inputs).enumerate() {
            a = match layer {
                CriticLayer::Conv(conv) => {
                    let w = self.params.get(conv.w);
                    let gw = ops::conv2d_weight_grad(&a, &upstream[i], w.shape(), conv.stride, conv.pad)?;
                    grads.acc(conv.w, &gw)?;
                    ops::conv2d_forward(&a, w, None, conv.stride, conv.pad)?
                }
                CriticLayer::Relu => ops::relu_backward(xin, &a)?,
                CriticLayer::LeakyRelu(s) => ops::leaky_relu_backward(xin, &a, T::from_f64_lossy(*s))?,
            };
        }
        Ok((value, grads))
    }
}
