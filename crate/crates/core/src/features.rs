//! Feature maps, pyramids and the built-in seeded texture extractor.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::exchange;
use crate::nn::ops;
use crate::tensor::{ImageTensor, Scalar, Tensor};

/// A `C×H×W` activation map tagged with its extraction level.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T: Scalar = f32> {
    data: Tensor<T>,
    level: String,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(data: Tensor<T>, level: impl Into<String>) -> Result<Self> {
        data.chw()?;
        if !data.all_finite() {
            return Err(Error::NonFinite("feature map".into()));
        }
        Ok(FeatureMap { data, level: level.into() })
    }

    pub fn from_vec(c: usize, h: usize, w: usize, values: Vec<T>, level: impl Into<String>) -> Result<Self> {
        Self::new(Tensor::from_vec(&[c, h, w], values)?, level)
    }

    pub fn zeros(c: usize, h: usize, w: usize, level: impl Into<String>) -> Self {
        FeatureMap { data: Tensor::zeros(&[c, h, w]), level: level.into() }
    }

    /// Loads a rank-3 map from a `.tnsr` file, converting to precision `T`.
    pub fn load(path: impl AsRef<Path>, level: impl Into<String>) -> Result<Self> {
        let t = exchange::read_tensor(path)?.into_tensor::<T>();
        Self::new(t, level)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        exchange::write_tensor(&self.data, path)
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn level(&self) -> &str {
        &self.level
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.data
    }

    pub fn data(&self) -> &[T] {
        self.data.data()
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data.data()[(c * self.height() + y) * self.width() + x]
    }

    pub fn cast<U: Scalar>(&self) -> FeatureMap<U> {
        FeatureMap { data: self.data.cast(), level: self.level.clone() }
    }
}

/// Maps ordered from the finest level to the coarsest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid<T: Scalar = f32> {
    levels: Vec<FeatureMap<T>>,
}

impl<T: Scalar> FeaturePyramid<T> {
    pub fn new(levels: Vec<FeatureMap<T>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::invalid("empty feature pyramid"));
        }
        for pair in levels.windows(2) {
            if pair[1].height() > pair[0].height() || pair[1].width() > pair[0].width() {
                return Err(Error::shape(format!(
                    "level {} ({}×{}) is larger than level {} ({}×{})",
                    pair[1].level(),
                    pair[1].height(),
                    pair[1].width(),
                    pair[0].level(),
                    pair[0].height(),
                    pair[0].width()
                )));
            }
        }
        Ok(FeaturePyramid { levels })
    }

    pub fn levels(&self) -> &[FeatureMap<T>] {
        &self.levels
    }

    pub fn level(&self, tag: &str) -> Option<&FeatureMap<T>> {
        self.levels.iter().find(|m| m.level() == tag)
    }

    pub fn deepest(&self) -> &FeatureMap<T> {
        self.levels.last().expect("pyramid is never empty")
    }

    pub fn into_deepest(mut self) -> FeatureMap<T> {
        self.levels.pop().expect("pyramid is never empty")
    }
}

pub const LEVEL_TAGS: [&str; 3] = ["L1", "L2", "L3"];
pub const LEVEL_CHANNELS: [usize; 3] = [16, 32, 64];
/// Level used for matching, swapping and both feature losses.
pub const MATCH_LEVEL: &str = "L3";

/// Seeded random conv/ReLU/avg-pool stack standing in for a pretrained texture network.
///
/// Level `Lk` sits at `1/2^(k-1)` of the input resolution.
#[derive(Debug, Clone)]
pub struct FallbackExtractor<T: Scalar = f32> {
    seed: u64,
    weights: Vec<Tensor<T>>,
}

/// Forward intermediates needed to push gradients back to the input image.
#[derive(Debug, Clone)]
pub struct ExtractorTrace<T: Scalar> {
    inputs: Vec<Tensor<T>>,
    pre: Vec<Tensor<T>>,
}

impl<T: Scalar> FallbackExtractor<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_c = 3;
        let weights = LEVEL_CHANNELS
            .iter()
            .map(|&out_c| {
                let fan_in = (in_c * 9) as f64;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).unwrap();
                let mut data: Vec<f64> = (0..out_c * in_c * 9).map(|_| normal.sample(&mut rng)).collect();
                if in_c == 3 {
                    // First-level kernels are spatially zero-mean so they respond to structure, not brightness.
                    for k in data.chunks_mut(9) {
                        let mean = k.iter().sum::<f64>() / 9.0;
                        k.iter_mut().for_each(|v| *v -= mean);
                    }
                }
                let data = data.into_iter().map(T::from_f64_lossy).collect();
                let w = Tensor::from_vec(&[out_c, in_c, 3, 3], data).unwrap();
                in_c = out_c;
                w
            })
            .collect();
        FallbackExtractor { seed, weights }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Copy in another precision.
    pub fn cast<U: Scalar>(&self) -> FallbackExtractor<U> {
        FallbackExtractor { seed: self.seed, weights: self.weights.iter().map(|w| w.cast()).collect() }
    }

    pub fn channels(&self, level: &str) -> Option<usize> {
        LEVEL_TAGS.iter().position(|&t| t == level).map(|i| LEVEL_CHANNELS[i])
    }

    fn check_input(h: usize, w: usize) -> Result<()> {
        if !h.is_multiple_of(4) || !w.is_multiple_of(4) || h == 0 || w == 0 {
            return Err(Error::invalid(format!("extractor input {h}×{w} must have extents divisible by 4")));
        }
        Ok(())
    }

    /// Runs the stack on a planar `3×H×W` input (values need not lie in `[0,1]`).
    pub fn forward(&self, x: &Tensor<T>) -> Result<(FeaturePyramid<T>, ExtractorTrace<T>)> {
        let (c, h, w) = x.chw()?;
        if c != 3 {
            return Err(Error::shape(format!("extractor expects 3 input channels, got {c}")));
        }
        Self::check_input(h, w)?;
        let mut inputs = Vec::with_capacity(3);
        let mut pre = Vec::with_capacity(3);
        let mut maps = Vec::with_capacity(3);
        let mut cur = x.clone();
        for (i, wt) in self.weights.iter().enumerate() {
            if i > 0 {
                cur = ops::avg_pool2(&cur)?;
            }
            let z = ops::conv2d_forward(&cur, wt, None, 1, 1)?;
            let a = ops::relu(&z);
            inputs.push(cur);
            pre.push(z);
            maps.push(FeatureMap { data: a.clone(), level: LEVEL_TAGS[i].to_string() });
            cur = a;
        }
        Ok((FeaturePyramid::new(maps)?, ExtractorTrace { inputs, pre }))
    }

    pub fn extract(&self, img: &ImageTensor) -> Result<FeaturePyramid<T>> {
        Self::check_input(img.height(), img.width())?;
        Ok(self.forward(&img.to_rgb().to_chw())?.0)
    }

    /// The deepest level only.
    pub fn extract_match_level(&self, img: &ImageTensor) -> Result<FeatureMap<T>> {
        Ok(self.extract(img)?.into_deepest())
    }

    /// Gradient with respect to the `3×H×W` input given per-level output gradients.
    pub fn backward(&self, trace: &ExtractorTrace<T>, level_grads: &[Option<&Tensor<T>>]) -> Result<Tensor<T>> {
        if level_grads.len() > self.weights.len() {
            return Err(Error::invalid("more level gradients than levels"));
        }
        let mut carry: Option<Tensor<T>> = None;
        for i in (0..self.weights.len()).rev() {
            let mut g = carry.take();
            if let Some(Some(extra)) = level_grads.get(i) {
                match g.as_mut() {
                    Some(acc) => acc.add_assign(extra)?,
                    None => g = Some((*extra).clone()),
                }
            }
            let Some(g) = g else { continue };
            let dz = ops::relu_backward(&trace.pre[i], &g)?;
            let dx = ops::conv2d_backward_input(&dz, &self.weights[i], trace.inputs[i].shape(), 1, 1)?;
            carry = Some(if i > 0 { ops::avg_pool2_backward(&dx)? } else { dx });
        }
        let (_, h, w) = trace.inputs[0].chw()?;
        Ok(carry.unwrap_or_else(|| Tensor::zeros(&[3, h, w])))
    }

    /// Gradient with respect to the input given the gradient at the deepest level.
    pub fn backward_deepest(&self, trace: &ExtractorTrace<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut grads: Vec<Option<&Tensor<T>>> = vec![None; self.weights.len()];
        *grads.last_mut().unwrap() = Some(grad);
        self.backward(trace, &grads)
    }
}
