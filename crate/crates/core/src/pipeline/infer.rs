//! Single-image inference.

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::nn::Generator;
use crate::swapper::{Bicubic, Upscaler};
use crate::tensor::ImageTensor;

use super::config::{RunConfig, UpscalerKind};
use super::precompute::{transfer_texture, FeatureStems, Texture};
use super::source::FeatureSource;

/// Upscales with the generator itself, fed an all-zero texture map.
pub struct GeneratorUpscaler<'a>(pub &'a Generator<f32>);

impl Upscaler for GeneratorUpscaler<'_> {
    fn upscale4(&self, img: &ImageTensor) -> Result<ImageTensor> {
        let c = self.0.config().texture_channels;
        self.0.infer(img, &FeatureMap::zeros(c, img.height(), img.width(), "texture"))
    }
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub sr: ImageTensor,
    pub texture: Texture,
}

/// Scale adjustment, features, matching, swapping and the generator forward pass.
pub fn infer(
    i_lr: &ImageTensor,
    i_ref: &ImageTensor,
    model: &Generator<f32>,
    cfg: &RunConfig,
    source: &FeatureSource,
    stems: &FeatureStems,
) -> Result<Inference> {
    let i_lr = i_lr.to_rgb();
    let i_ref = i_ref.to_rgb();
    let texture = match cfg.upscaler {
        UpscalerKind::Bicubic => transfer_texture(&i_lr, &i_ref, source, cfg, &Bicubic, stems)?,
        UpscalerKind::Generator => transfer_texture(&i_lr, &i_ref, source, cfg, &GeneratorUpscaler(model), stems)?,
    };
    if texture.m_t.channels() != model.config().texture_channels {
        return Err(Error::shape(format!(
            "model expects {} texture channels, the feature source gives {}",
            model.config().texture_channels,
            texture.m_t.channels()
        )));
    }
    let sr = model.infer(&i_lr, &texture.m_t)?;
    Ok(Inference { sr, texture })
}
