//! Two-phase training: reconstruction-only pretraining, then the full
//! weighted objective with alternating critic and generator updates.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exchange::write_tensor;
use crate::features::FallbackExtractor;
use crate::imaging::{bicubic_resize, write_png, Scale};
use crate::losses::{gradient_penalty, loss_per, loss_rec, loss_texture, total_loss, LossComponents, LossTerm};
use crate::nn::{AdamConfig, Critic, Generator, GeneratorConfig, Grads, ParamGroup};
use crate::tensor::{ImageTensor, Tensor};

use super::config::RunConfig;
use super::evaluate::{evaluate, output_path, MetricsTable};
use super::manifest::{pair_id, PairManifest};
use super::model::{save_critic, save_generator};
use super::precompute::{load_pair, precompute_mt, CacheEntry};
use super::source::FeatureSource;

/// One line of the loss log, batch means of the unweighted terms and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub rec: f64,
    pub per: f64,
    pub adv: f64,
    pub tex: f64,
    pub total: f64,
}

pub fn loss_csv(rows: &[LossRow]) -> String {
    let mut s = String::from("step,rec,per,adv,tex,total\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{},{}", r.step, r.rec, r.per, r.adv, r.tex, r.total).unwrap();
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub rows: Vec<LossRow>,
    pub generator: Generator<f32>,
    /// Training-set metrics of the generator outputs.
    pub sr_metrics: MetricsTable,
    /// The same metrics for plain bicubic upscaling.
    pub bicubic_metrics: MetricsTable,
    pub out_dir: PathBuf,
}

impl TrainReport {
    pub fn steps(&self) -> usize {
        self.rows.len()
    }
}

struct Sample {
    index: usize,
    lr_img: ImageTensor,
    lr: Tensor<f32>,
    hr: Tensor<f32>,
    m_t: Tensor<f32>,
    /// Similarity clamped to `[0,1]`, `1×H×W`.
    sim: Tensor<f32>,
    phi_hr: Tensor<f32>,
}

struct SampleResult {
    comps: LossComponents<f32>,
    total: f32,
    grads: Grads<f32>,
}

/// Everything that stays fixed across steps.
struct Trainer<'a> {
    cfg: &'a RunConfig,
    extractor: FallbackExtractor<f32>,
    samples: Vec<Sample>,
    out: &'a Path,
}

impl Trainer<'_> {
    fn sample_step(&self, g: &Generator<f32>, critic: &Critic<f32>, s: &Sample, full: bool) -> Result<SampleResult> {
        let w = &self.cfg.weights;
        let (out, trace) = g.forward(&s.lr, &s.m_t)?;
        let (rec, g_rec) = loss_rec(&out, &s.hr)?;
        let mut comps = LossComponents {
            rec: LossTerm { value: rec, grad: Some(g_rec) },
            per: LossTerm::zero(),
            adv: LossTerm::zero(),
            tex: LossTerm::zero(),
        };
        let mut tex_grad = None;
        if full && (w.alpha > 0.0 || w.lambda > 0.0) {
            let (pyr, ex_trace) = self.extractor.forward(&out)?;
            let phi = pyr.deepest().tensor();
            if w.alpha > 0.0 {
                let (v, g_phi) = loss_per(phi, &s.phi_hr)?;
                comps.per = LossTerm { value: v, grad: Some(self.extractor.backward_deepest(&ex_trace, &g_phi)?) };
            }
            if w.lambda > 0.0 {
                let (v, g_phi) = loss_texture(phi, &s.sim, &s.m_t)?;
                comps.tex = LossTerm::value(v);
                let mut g_img = self.extractor.backward_deepest(&ex_trace, &g_phi)?;
                g_img.scale(w.lambda as f32);
                tex_grad = Some(g_img);
            }
        }
        if full && w.beta > 0.0 {
            let (score, c_trace) = critic.forward(&out)?;
            let (_, gx) = critic.backward(&c_trace, -1.0)?;
            comps.adv = LossTerm { value: -score, grad: Some(gx) };
        }
        let bundle = total_loss(&comps, w)?;
        let grad_sr = bundle.grad_sr.expect("reconstruction gradient is always present");
        let mut grads = g.backward(&trace, &grad_sr)?;
        if let Some(gt) = tex_grad {
            // The texture term only trains the parts downstream of the content extractor.
            let mut tg = g.backward(&trace, &gt)?;
            tg.mask_group(g.params(), ParamGroup::Content);
            grads.axpy(1.0, &tg)?;
        }
        Ok(SampleResult { comps, total: bundle.total, grads })
    }

    fn generator_step(&self, g: &Generator<f32>, critic: &Critic<f32>, batch: &[usize], full: bool) -> Result<(LossRow, Grads<f32>)> {
        let run = |&i: &usize| self.sample_step(g, critic, &self.samples[i], full);
        #[cfg(feature = "parallel")]
        let results: Vec<Result<SampleResult>> = batch.par_iter().map(run).collect();
        #[cfg(not(feature = "parallel"))]
        let results: Vec<Result<SampleResult>> = batch.iter().map(run).collect();

        let inv = 1.0 / batch.len() as f32;
        let mut grads = g.params().zero_grads();
        let mut sums = [0f64; 5];
        for r in results {
            let r = r?;
            grads.axpy(inv, &r.grads)?;
            let c = &r.comps;
            for (acc, v) in sums.iter_mut().zip([c.rec.value, c.per.value, c.adv.value, c.tex.value, r.total]) {
                *acc += v as f64;
            }
        }
        let n = batch.len() as f64;
        let row = LossRow { step: 0, rec: sums[0] / n, per: sums[1] / n, adv: sums[2] / n, tex: sums[3] / n, total: sums[4] / n };
        Ok((row, grads))
    }

    fn critic_step(&self, g: &Generator<f32>, critic: &mut Critic<f32>, batch: &[usize], adam: &AdamConfig, seed: u64) -> Result<f64> {
        let fakes: Vec<Tensor<f32>> =
            batch.iter().map(|&i| g.forward(&self.samples[i].lr, &self.samples[i].m_t).map(|r| r.0)).collect::<Result<_>>()?;
        let reals: Vec<Tensor<f32>> = batch.iter().map(|&i| self.samples[i].hr.clone()).collect();
        let inv = 1.0 / batch.len() as f32;
        let mut grads = critic.params().zero_grads();
        let mut value = 0f32;
        for (fake, real) in fakes.iter().zip(&reals) {
            let (sf, tf) = critic.forward(fake)?;
            grads.axpy(1.0, &critic.backward(&tf, inv)?.0)?;
            let (sr, tr) = critic.forward(real)?;
            grads.axpy(1.0, &critic.backward(&tr, -inv)?.0)?;
            value += (sf - sr) * inv;
        }
        if self.cfg.gp_enabled {
            let (gp, gp_grads) = gradient_penalty(critic, &reals, &fakes, self.cfg.gp_weight, seed)?;
            value += gp;
            grads.axpy(1.0, &gp_grads)?;
        }
        if !value.is_finite() || !grads.all_finite() {
            return Err(Error::NonFinite(format!("critic loss {value}")));
        }
        critic.params_mut().adam_step(&grads, adam)?;
        if !self.cfg.gp_enabled {
            critic.params_mut().clip(self.cfg.clip);
        }
        Ok(value as f64)
    }

    /// Writes the offending batch and returns the abort error.
    fn dump_divergence(&self, step: usize, batch: &[usize], msg: &str) -> Error {
        let dir = self.out.join(format!("diverged_step{step:06}"));
        let write = || -> Result<()> {
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut info = format!("step {step}\n{msg}\n");
            for &i in batch {
                let s = &self.samples[i];
                let id = pair_id(s.index);
                writeln!(info, "pair {id}").unwrap();
                write_tensor(&s.lr, dir.join(format!("{id}.lr.tnsr")))?;
                write_tensor(&s.hr, dir.join(format!("{id}.hr.tnsr")))?;
                write_tensor(&s.m_t, dir.join(format!("{id}.mt.tnsr")))?;
            }
            let p = dir.join("info.txt");
            fs::write(&p, info).map_err(|e| Error::io(&p, e))
        };
        let detail = match write() {
            Ok(()) => format!("{msg}; batch written to {}", dir.display()),
            Err(e) => format!("{msg}; writing the batch failed: {e}"),
        };
        Error::Diverged { step, msg: detail }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn save_checkpoint(dir: &Path, g: &Generator<f32>, critic: &Critic<f32>) -> Result<()> {
    save_generator(&dir.join("generator"), g)?;
    save_critic(&dir.join("critic"), critic)
}

/// Trains on the manifest and writes checkpoints, the loss log, training-set
/// outputs and their metrics under `out`.
pub fn train(manifest: &PairManifest, cfg: &RunConfig, out: &Path) -> Result<TrainReport> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_text(&out.join("config.txt"), &cfg.to_text())?;

    let report = precompute_mt(manifest, cfg)?;
    let failures = report.failures();
    if !failures.is_empty() {
        let list: Vec<String> = failures.iter().map(|(i, m)| format!("{}: {m}", pair_id(*i))).collect();
        return Err(Error::InvalidArgument(format!("texture precomputation failed for {}", list.join("; "))));
    }
    let entries: Vec<CacheEntry> = report.outcomes.into_iter().map(|o| o.entry.expect("successful outcome")).collect();

    let extractor = FallbackExtractor::<f32>::new(cfg.loss_extractor_seed);
    let mut samples = Vec::with_capacity(manifest.len());
    for (i, (rec, entry)) in manifest.records.iter().zip(&entries).enumerate() {
        let imgs = load_pair(rec)?;
        let (m_t, sim) = entry.load()?;
        if (m_t.height(), m_t.width()) != (imgs.lr.height(), imgs.lr.width()) {
            return Err(Error::shape(format!("texture map of pair {} does not cover its input grid", pair_id(i))));
        }
        let phi_hr = extractor.extract_match_level(&imgs.hr)?.into_tensor();
        samples.push(Sample {
            index: i,
            lr: imgs.lr.to_chw(),
            lr_img: imgs.lr,
            hr: imgs.hr.to_chw(),
            m_t: m_t.into_tensor(),
            sim: sim.map(|v| v.clamp(0.0, 1.0)),
            phi_hr,
        });
    }
    let tex_channels = samples[0].m_t.shape()[0];
    if samples.iter().any(|s| s.m_t.shape()[0] != tex_channels) {
        return Err(Error::shape("texture maps differ in channel count across pairs"));
    }
    if cfg.weights.lambda > 0.0 && Some(tex_channels) != extractor.channels(crate::features::MATCH_LEVEL) {
        return Err(Error::Config(format!(
            "the texture loss compares against {tex_channels}-channel texture maps but the loss extractor has {:?}; set lambda = 0 for external features",
            extractor.channels(crate::features::MATCH_LEVEL)
        )));
    }

    let mut g = Generator::<f32>::new(GeneratorConfig { texture_channels: tex_channels, ..cfg.generator }, cfg.seed);
    let mut critic = Critic::<f32>::standard(3, cfg.critic_width, cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let trainer = Trainer { cfg, extractor, samples, out };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    let mut order: Vec<usize> = (0..trainer.samples.len()).collect();
    let ckpt_root = out.join("checkpoints");

    'epochs: for epoch in 0..cfg.total_epochs {
        let full = epoch >= cfg.pretrain_epochs;
        let adam = AdamConfig { lr: cfg.lr_at(epoch), ..Default::default() };
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| rows.len() >= m) {
                break 'epochs;
            }
            let step = rows.len() + 1;
            if full && cfg.weights.beta > 0.0 {
                for k in 0..cfg.critic_steps {
                    let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add((step * cfg.critic_steps + k) as u64);
                    if let Err(e) = trainer.critic_step(&g, &mut critic, batch, &adam, seed) {
                        write_text(&out.join("losses.csv"), &loss_csv(&rows))?;
                        return Err(trainer.dump_divergence(step, batch, &e.to_string()));
                    }
                }
            }
            let (mut row, grads) = trainer.generator_step(&g, &critic, batch, full)?;
            row.step = step;
            if !row.total.is_finite() || !grads.all_finite() {
                write_text(&out.join("losses.csv"), &loss_csv(&rows))?;
                let msg = format!("non-finite loss (rec {}, per {}, adv {}, tex {}, total {})", row.rec, row.per, row.adv, row.tex, row.total);
                return Err(trainer.dump_divergence(step, batch, &msg));
            }
            g.params_mut().adam_step(&grads, &adam)?;
            rows.push(row);
        }
        save_checkpoint(&ckpt_root.join(format!("epoch_{epoch:04}")), &g, &critic)?;
        write_text(&out.join("losses.csv"), &loss_csv(&rows))?;
    }
    save_checkpoint(&out.join("model"), &g, &critic)?;
    write_text(&out.join("losses.csv"), &loss_csv(&rows))?;

    // Training-set outputs next to the bicubic baseline.
    let (sr_dir, bic_dir) = (out.join("sr"), out.join("bicubic"));
    for d in [&sr_dir, &bic_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for s in &trainer.samples {
        let m_t = crate::features::FeatureMap::new(s.m_t.clone(), "texture")?;
        write_png(&g.infer(&s.lr_img, &m_t)?, output_path(&sr_dir, s.index))?;
        write_png(&bicubic_resize(&s.lr_img, Scale::up(4))?, output_path(&bic_dir, s.index))?;
    }
    let source = FeatureSource::from_config(&cfg.features);
    let sr_metrics = evaluate(&sr_dir, manifest, &source)?;
    let bicubic_metrics = evaluate(&bic_dir, manifest, &source)?;
    sr_metrics.write(&out.join("metrics.csv"))?;
    bicubic_metrics.write(&out.join("bicubic_metrics.csv"))?;

    Ok(TrainReport { rows, generator: g, sr_metrics, bicubic_metrics, out_dir: out.to_path_buf() })
}
