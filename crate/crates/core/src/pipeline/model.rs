//! Generator checkpoints with enough metadata to rebuild the network.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::checkpoint;
use crate::nn::{Critic, Generator, GeneratorConfig};

pub fn save_generator(dir: &Path, g: &Generator<f32>) -> Result<()> {
    let c = g.config();
    let meta: Vec<(String, String)> = [
        ("image_channels", c.image_channels),
        ("texture_channels", c.texture_channels),
        ("width", c.width),
        ("content_blocks", c.content_blocks),
        ("transfer_blocks", c.transfer_blocks),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    checkpoint::save(dir, g.params(), &meta, &g.layer_specs())
}

pub fn load_generator(dir: &Path) -> Result<Generator<f32>> {
    let (params, meta) = checkpoint::load::<f32>(dir)?;
    let cfg = GeneratorConfig {
        image_channels: meta.get_usize("image_channels")?,
        texture_channels: meta.get_usize("texture_channels")?,
        width: meta.get_usize("width")?,
        content_blocks: meta.get_usize("content_blocks")?,
        transfer_blocks: meta.get_usize("transfer_blocks")?,
    };
    let mut g = Generator::new(cfg, 0);
    g.set_params(params).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
    Ok(g)
}

pub fn save_critic(dir: &Path, c: &Critic<f32>) -> Result<()> {
    let layers: Vec<(String, _)> = c.layer_specs().into_iter().enumerate().map(|(i, s)| (format!("critic.{i}"), s)).collect();
    checkpoint::save(dir, c.params(), &[], &layers)
}
