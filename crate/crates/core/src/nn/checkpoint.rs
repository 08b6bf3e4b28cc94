//! Checkpoints: one `.tnsr` per tensor plus a plain-text manifest.
//!
//! ```text
//! step 120
//! meta width=64
//! layer content.head conv2d in=3 out=64 k=3 stride=1 pad=1
//! param content.head.weight content 64,3,3,3
//! ```
//!
//! Each parameter `p` is stored as `p.tnsr`, with Adam moments in
//! `p.adam_m.tnsr` and `p.adam_v.tnsr`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::layers::LayerSpec;
use super::params::{ModelParams, ParamGroup};
use crate::error::{Error, Result};
use crate::exchange::{read_tensor, write_tensor};
use crate::tensor::Scalar;

pub const MANIFEST: &str = "manifest.txt";

/// Contents of a checkpoint manifest besides the tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckpointMeta {
    pub meta: Vec<(String, String)>,
    pub layers: Vec<String>,
}

impl CheckpointMeta {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("checkpoint lacks `{key}`")))?
            .parse()
            .map_err(|_| Error::Config(format!("checkpoint `{key}` is not an integer")))
    }
}

pub fn save<T: Scalar>(
    dir: &Path,
    params: &ModelParams<T>,
    meta: &[(String, String)],
    layers: &[(String, LayerSpec)],
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut text = String::new();
    writeln!(text, "step {}", params.step()).unwrap();
    for (k, v) in meta {
        writeln!(text, "meta {k}={v}").unwrap();
    }
    for (name, spec) in layers {
        writeln!(text, "layer {name} {spec}").unwrap();
    }
    for p in params.params() {
        let shape: Vec<String> = p.value.shape().iter().map(|e| e.to_string()).collect();
        writeln!(text, "param {} {} {}", p.name, p.group.name(), shape.join(",")).unwrap();
        write_tensor(&p.value, dir.join(format!("{}.tnsr", p.name)))?;
        write_tensor(&p.m, dir.join(format!("{}.adam_m.tnsr", p.name)))?;
        write_tensor(&p.v, dir.join(format!("{}.adam_v.tnsr", p.name)))?;
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(dir: &Path) -> Result<(ModelParams<T>, CheckpointMeta)> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut params = ModelParams::new();
    let mut meta = CheckpointMeta::default();
    let mut step = 0;
    let bad = |line: usize, msg: &str| Error::Manifest { path: path.clone(), line, msg: msg.to_string() };
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let Some((tag, rest)) = line.split_once(' ') else { continue };
        match tag {
            "step" => step = rest.trim().parse().map_err(|_| bad(line_no, "bad step"))?,
            "meta" => {
                let (k, v) = rest.split_once('=').ok_or_else(|| bad(line_no, "meta needs key=value"))?;
                meta.meta.push((k.to_string(), v.to_string()));
            }
            "layer" => meta.layers.push(rest.to_string()),
            "param" => {
                let parts: Vec<&str> = rest.split(' ').collect();
                let [name, group, shape] = parts[..] else { return Err(bad(line_no, "param needs name group shape")) };
                let group = ParamGroup::parse(group).ok_or_else(|| bad(line_no, "unknown parameter group"))?;
                let shape: Vec<usize> = shape
                    .split(',')
                    .map(|s| s.parse().map_err(|_| bad(line_no, "bad shape")))
                    .collect::<Result<_>>()?;
                let value = read_tensor(dir.join(format!("{name}.tnsr")))?.into_tensor::<T>();
                if value.shape() != shape.as_slice() {
                    return Err(bad(line_no, "stored tensor shape differs from manifest"));
                }
                let id = params.add(name, group, value);
                let m = read_tensor(dir.join(format!("{name}.adam_m.tnsr")))?.into_tensor::<T>();
                let v = read_tensor(dir.join(format!("{name}.adam_v.tnsr")))?.into_tensor::<T>();
                let p = &mut params.params_mut()[id.0];
                if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
                    return Err(bad(line_no, "moment shape differs from parameter"));
                }
                p.m = m;
                p.v = v;
            }
            _ => {}
        }
    }
    params.set_step(step);
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::generator::{Generator, GeneratorConfig};

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let g = Generator::<f32>::new(GeneratorConfig { width: 8, texture_channels: 4, content_blocks: 1, transfer_blocks: 1, image_channels: 3 }, 3);
        let mut params = g.params().clone();
        params.set_step(17);
        params.params_mut()[0].m = params.params()[0].value.map(|v| v * 0.5);
        let meta = vec![("width".to_string(), "8".to_string())];
        save(dir.path(), &params, &meta, &g.layer_specs()).unwrap();
        let (back, m) = load::<f32>(dir.path()).unwrap();
        assert_eq!(back, params);
        assert_eq!(m.get_usize("width").unwrap(), 8);
        assert_eq!(m.layers.len(), g.layer_specs().len());
    }
}
