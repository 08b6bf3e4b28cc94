//! Named parameter storage with Adam state.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Which part of a network a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Content,
    Transfer,
    Upscale,
    Critic,
}

impl ParamGroup {
    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Content => "content",
            ParamGroup::Transfer => "transfer",
            ParamGroup::Upscale => "upscale",
            ParamGroup::Critic => "critic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "content" => ParamGroup::Content,
            "transfer" => ParamGroup::Transfer,
            "upscale" => ParamGroup::Upscale,
            "critic" => ParamGroup::Critic,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor<T>,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// All trainable tensors of one model, their Adam moments and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Scalar = f32> {
    params: Vec<Param<T>>,
    step: u64,
}

impl<T: Scalar> Default for ModelParams<T> {
    fn default() -> Self {
        ModelParams { params: Vec::new(), step: 0 }
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor<T>) -> ParamId {
        let shape = value.shape().to_vec();
        self.params.push(Param { name: name.into(), group, value, m: Tensor::zeros(&shape), v: Tensor::zeros(&shape) });
        ParamId(self.params.len() - 1)
    }

    /// Adds a conv weight with He-normal init (`std = √(2/fan_in)`) and a zero bias.
    pub fn add_conv(
        &mut self,
        name: &str,
        group: ParamGroup,
        out_c: usize,
        in_c: usize,
        k: usize,
        rng: &mut impl Rng,
    ) -> (ParamId, ParamId) {
        let fan_in = (in_c * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).unwrap();
        let data = (0..out_c * in_c * k * k).map(|_| T::from_f64_lossy(normal.sample(rng))).collect();
        let w = self.add(format!("{name}.weight"), group, Tensor::from_vec(&[out_c, in_c, k, k], data).unwrap());
        let b = self.add(format!("{name}.bias"), group, Tensor::zeros(&[out_c]));
        (w, b)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads { tensors: self.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect() }
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// One bias-corrected Adam update; increments the step counter.
    pub fn adam_step(&mut self, grads: &Grads<T>, cfg: &AdamConfig) -> Result<()> {
        if grads.tensors.len() != self.params.len() {
            return Err(Error::shape(format!("{} gradients for {} parameters", grads.tensors.len(), self.params.len())));
        }
        for (p, g) in self.params.iter().zip(&grads.tensors) {
            if p.value.shape() != g.shape() {
                return Err(Error::shape(format!("gradient of {} is {:?}, expected {:?}", p.name, g.shape(), p.value.shape())));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64_lossy(cfg.beta1);
        let b2 = T::from_f64_lossy(cfg.beta2);
        let one = T::one();
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        let lr = T::from_f64_lossy(cfg.lr);
        let eps = T::from_f64_lossy(cfg.eps);
        for (p, g) in self.params.iter_mut().zip(&grads.tensors) {
            let (vals, m, v) = (p.value.data_mut(), p.m.data_mut(), p.v.data_mut());
            for i in 0..vals.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                vals[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Clamps every parameter into `[-c, c]`.
    pub fn clip(&mut self, c: f64) {
        let c = T::from_f64_lossy(c);
        for p in &mut self.params {
            for v in p.value.data_mut() {
                *v = v.max(-c).min(c);
            }
        }
    }
}

/// Gradients aligned index-for-index with a [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T: Scalar> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn acc(&mut self, id: ParamId, g: &Tensor<T>) -> Result<()> {
        self.tensors[id.0].add_assign(g)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: T, other: &Grads<T>) -> Result<()> {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.axpy(scale, b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.tensors {
            t.scale(s);
        }
    }

    /// Zeroes every gradient whose parameter belongs to `group`.
    pub fn mask_group(&mut self, params: &ModelParams<T>, group: ParamGroup) {
        for (t, p) in self.tensors.iter_mut().zip(params.params()) {
            if p.group == group {
                t.data_mut().fill(T::zero());
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }
}
