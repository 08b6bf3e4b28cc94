//! The super-resolution generator: content extractor, conditional texture
//! transfer and a two-stage sub-pixel upscaler.
//!
//! ```text
//! I_lr ─ conv ─ R_c res blocks ──────────── M_c ─┬──────────────── (+) ─ F
//!                                                 │                  │
//! M_t ──────────────────────── concat[M_c; M_t] ─┴ conv ─ R_t blocks ─ conv
//!
//! F ─ conv ─ shuffle×2 ─ relu ─ conv ─ shuffle×2 ─ relu ─ conv ─ I_sr (4×)
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{residual_block_backward, residual_block_forward, Conv, LayerSpec, ResBlock, ResTrace};
use super::ops;
use super::params::{Grads, ModelParams, ParamGroup};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::tensor::{ImageTensor, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub image_channels: usize,
    pub texture_channels: usize,
    pub width: usize,
    pub content_blocks: usize,
    pub transfer_blocks: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { image_channels: 3, texture_channels: 64, width: 64, content_blocks: 4, transfer_blocks: 4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    head: Conv,
    content: Vec<ResBlock>,
    fuse_in: Conv,
    transfer: Vec<ResBlock>,
    fuse_out: Conv,
    up1: Conv,
    up2: Conv,
    tail: Conv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T: Scalar = f32> {
    cfg: GeneratorConfig,
    params: ModelParams<T>,
    layout: Layout,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct GeneratorTrace<T: Scalar> {
    x: Tensor<T>,
    content: Vec<ResTrace<T>>,
    mc: Tensor<T>,
    cat: Tensor<T>,
    transfer: Vec<ResTrace<T>>,
    transfer_out: Tensor<T>,
    fused: Tensor<T>,
    shuffled1: Tensor<T>,
    u1: Tensor<T>,
    shuffled2: Tensor<T>,
    u2: Tensor<T>,
}

impl<T: Scalar> Generator<T> {
    /// Seeded He-normal conv weights, zero biases.
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::new();
        let n = cfg.width;
        let head = Conv::new(&mut p, "content.head", ParamGroup::Content, cfg.image_channels, n, 3, 1, &mut rng);
        let content = (0..cfg.content_blocks)
            .map(|i| ResBlock::new(&mut p, &format!("content.block{i}"), ParamGroup::Content, n, &mut rng))
            .collect();
        let fuse_in = Conv::new(&mut p, "transfer.fuse_in", ParamGroup::Transfer, n + cfg.texture_channels, n, 3, 1, &mut rng);
        let transfer = (0..cfg.transfer_blocks)
            .map(|i| ResBlock::new(&mut p, &format!("transfer.block{i}"), ParamGroup::Transfer, n, &mut rng))
            .collect();
        let fuse_out = Conv::new(&mut p, "transfer.fuse_out", ParamGroup::Transfer, n, n, 3, 1, &mut rng);
        let up1 = Conv::new(&mut p, "upscale.conv1", ParamGroup::Upscale, n, 4 * n, 3, 1, &mut rng);
        let up2 = Conv::new(&mut p, "upscale.conv2", ParamGroup::Upscale, n, 4 * n, 3, 1, &mut rng);
        let tail = Conv::new(&mut p, "upscale.tail", ParamGroup::Upscale, n, cfg.image_channels, 3, 1, &mut rng);
        let layout = Layout { head, content, fuse_in, transfer, fuse_out, up1, up2, tail };
        Generator { cfg, params: p, layout }
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<T> {
        &mut self.params
    }

    /// Replaces the parameters, e.g. from a checkpoint. Names and shapes must match.
    pub fn set_params(&mut self, params: ModelParams<T>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::shape(format!("{} tensors for a {}-tensor generator", params.len(), self.params.len())));
        }
        for (a, b) in params.params().iter().zip(self.params.params()) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::shape(format!("parameter {} {:?} does not fit {} {:?}", a.name, a.value.shape(), b.name, b.value.shape())));
            }
        }
        self.params = params;
        Ok(())
    }

    /// Copy in another precision.
    pub fn cast<U: Scalar>(&self) -> Generator<U> {
        let mut p = ModelParams::<U>::new();
        for q in self.params.params() {
            p.add(q.name.clone(), q.group, q.value.cast());
        }
        for (dst, src) in p.params_mut().iter_mut().zip(self.params.params()) {
            dst.m = src.m.cast();
            dst.v = src.v.cast();
        }
        p.set_step(self.params.step());
        Generator { cfg: self.cfg, params: p, layout: self.layout.clone() }
    }

    /// Layer listing in execution order.
    pub fn layer_specs(&self) -> Vec<(String, LayerSpec)> {
        let p = &self.params;
        let l = &self.layout;
        let mut out = vec![("content.head".to_string(), l.head.spec(p))];
        for (i, b) in l.content.iter().enumerate() {
            out.push((format!("content.block{i}"), b.spec(p)));
        }
        out.push((
            "transfer.concat".into(),
            LayerSpec::Concat { first: self.cfg.width, second: self.cfg.texture_channels },
        ));
        out.push(("transfer.fuse_in".into(), l.fuse_in.spec(p)));
        for (i, b) in l.transfer.iter().enumerate() {
            out.push((format!("transfer.block{i}"), b.spec(p)));
        }
        out.push(("transfer.fuse_out".into(), l.fuse_out.spec(p)));
        out.push(("transfer.add".into(), LayerSpec::ElementwiseAdd));
        for (i, c) in [l.up1, l.up2].iter().enumerate() {
            out.push((format!("upscale.conv{}", i + 1), c.spec(p)));
            out.push((format!("upscale.shuffle{}", i + 1), LayerSpec::PixelShuffle { factor: 2 }));
            out.push((format!("upscale.relu{}", i + 1), LayerSpec::Relu));
        }
        out.push(("upscale.tail".into(), l.tail.spec(p)));
        out
    }

    /// Pre-clamp `C×4H×4W` output for a planar `C×H×W` input.
    pub fn forward(&self, x: &Tensor<T>, m_t: &Tensor<T>) -> Result<(Tensor<T>, GeneratorTrace<T>)> {
        let (c, h, w) = x.chw()?;
        let (tc, th, tw) = m_t.chw()?;
        if c != self.cfg.image_channels {
            return Err(Error::shape(format!("generator expects {} image channels, got {c}", self.cfg.image_channels)));
        }
        if (th, tw) != (h, w) {
            return Err(Error::shape(format!("texture map {th}×{tw} does not match the {h}×{w} input grid")));
        }
        if tc != self.cfg.texture_channels {
            return Err(Error::shape(format!("generator expects {} texture channels, got {tc}", self.cfg.texture_channels)));
        }
        let p = &self.params;
        let l = &self.layout;

        let mut cur = l.head.forward(p, x)?;
        let mut content = Vec::with_capacity(l.content.len());
        for b in &l.content {
            let (y, tr) = residual_block_forward(b, p, &cur)?;
            content.push(tr);
            cur = y;
        }
        let mc = cur;

        let cat = ops::concat_channels(&mc, m_t)?;
        let mut t = l.fuse_in.forward(p, &cat)?;
        let mut transfer = Vec::with_capacity(l.transfer.len());
        for b in &l.transfer {
            let (y, tr) = residual_block_forward(b, p, &t)?;
            transfer.push(tr);
            t = y;
        }
        let transfer_out = t;
        let mut fused = l.fuse_out.forward(p, &transfer_out)?;
        fused.add_assign(&mc)?;

        let shuffled1 = ops::pixel_shuffle(&l.up1.forward(p, &fused)?, 2)?;
        let u1 = ops::relu(&shuffled1);
        let shuffled2 = ops::pixel_shuffle(&l.up2.forward(p, &u1)?, 2)?;
        let u2 = ops::relu(&shuffled2);
        let out = l.tail.forward(p, &u2)?;

        let trace = GeneratorTrace {
            x: x.clone(),
            content,
            mc,
            cat,
            transfer,
            transfer_out,
            fused,
            shuffled1,
            u1,
            shuffled2,
            u2,
        };
        Ok((out, trace))
    }

    /// Parameter gradients for an output gradient.
    pub fn backward(&self, trace: &GeneratorTrace<T>, grad_out: &Tensor<T>) -> Result<Grads<T>> {
        let p = &self.params;
        let l = &self.layout;
        let mut grads = p.zero_grads();

        let g_u2 = l.tail.backward(p, &trace.u2, grad_out, &mut grads)?;
        let g_s2 = ops::relu_backward(&trace.shuffled2, &g_u2)?;
        let g_pre2 = ops::pixel_unshuffle(&g_s2, 2)?;
        let g_u1 = l.up2.backward(p, &trace.u1, &g_pre2, &mut grads)?;
        let g_s1 = ops::relu_backward(&trace.shuffled1, &g_u1)?;
        let g_pre1 = ops::pixel_unshuffle(&g_s1, 2)?;
        let g_fused = l.up1.backward(p, &trace.fused, &g_pre1, &mut grads)?;

        // fused = fuse_out(transfer_out) + mc
        let mut g_t = l.fuse_out.backward(p, &trace.transfer_out, &g_fused, &mut grads)?;
        for (b, tr) in l.transfer.iter().zip(&trace.transfer).rev() {
            g_t = residual_block_backward(b, p, tr, &g_t, &mut grads)?;
        }
        let g_cat = l.fuse_in.backward(p, &trace.cat, &g_t, &mut grads)?;
        let (g_mc_cat, _g_mt) = ops::split_channels(&g_cat, self.cfg.width)?;

        let mut g_mc = g_fused;
        g_mc.add_assign(&g_mc_cat)?;
        for (b, tr) in l.content.iter().zip(&trace.content).rev() {
            g_mc = residual_block_backward(b, p, tr, &g_mc, &mut grads)?;
        }
        l.head.backward(p, &trace.x, &g_mc, &mut grads)?;
        Ok(grads)
    }

    /// Content map `M_c` recorded in a trace.
    pub fn content_map<'a>(&self, trace: &'a GeneratorTrace<T>) -> &'a Tensor<T> {
        &trace.mc
    }

    /// Inference on an image: runs [`Generator::forward`] and clamps to `[0,1]`.
    pub fn infer(&self, i_lr: &ImageTensor, m_t: &FeatureMap<T>) -> Result<ImageTensor> {
        let x = i_lr.to_rgb().to_chw::<T>();
        let (out, _) = self.forward(&x, m_t.tensor())?;
        ImageTensor::from_chw(&out)
    }
}
