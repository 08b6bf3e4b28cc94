use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use reftex::features::FallbackExtractor;
use reftex::imaging::{read_png, write_png};
use reftex::pipeline::{self, FeatureSource, FeatureStems, PairManifest, RunConfig};

#[derive(Parser)]
#[command(name = "reftex", version, about = "Reference-based 4x super-resolution by texture transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute and cache texture maps for every pair of a manifest.
    Precompute {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a generator; writes checkpoints, losses.csv and training-set metrics.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Super-resolve one image with a reference.
    Infer {
        #[arg(long)]
        lr: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Generator checkpoint directory (e.g. <train-out>/model/generator).
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the similarity map as a grayscale PNG.
        #[arg(long)]
        sim_out: Option<PathBuf>,
    },
    /// PSNR, SSIM and Gram distance of `<results>/<pair_id>.png` against a manifest.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write the built-in extractor's activations for an image as .tnsr files.
    DumpFallback {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: Option<&Path>) -> reftex::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn model_dir(path: &Path) -> PathBuf {
    // Accept either the generator directory or a checkpoint directory holding one.
    if path.join("generator").is_dir() {
        path.join("generator")
    } else {
        path.to_path_buf()
    }
}

fn run(cli: Cli) -> reftex::Result<ExitCode> {
    match cli.command {
        Command::Precompute { manifest, config } => {
            let cfg = load_config(config.as_deref())?;
            let m = PairManifest::load(&manifest)?;
            let report = pipeline::precompute_mt(&m, &cfg)?;
            println!(
                "{} pairs: {} computed, {} cached, {} failed ({})",
                m.len(),
                report.computed(),
                report.hits(),
                report.failures().len(),
                cfg.cache_dir.display()
            );
            for (i, msg) in report.failures() {
                eprintln!("pair {}: {msg}", pipeline::pair_id(i));
            }
            Ok(if report.failures().is_empty() { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::Train { manifest, config, out } => {
            let cfg = load_config(config.as_deref())?;
            let m = PairManifest::load(&manifest)?;
            let report = pipeline::train(&m, &cfg, &out)?;
            let first = report.rows.first().map_or(f64::NAN, |r| r.total);
            let last = report.rows.last().map_or(f64::NAN, |r| r.total);
            println!("{} steps, total loss {first:.5} -> {last:.5}", report.steps());
            if let (Some(sr), Some(bic)) = (report.sr_metrics.means(), report.bicubic_metrics.means()) {
                println!("training set  psnr {:.3} dB  ssim {:.4}  gram {:.4e}", sr.0, sr.1, sr.2);
                println!("bicubic       psnr {:.3} dB  ssim {:.4}  gram {:.4e}", bic.0, bic.1, bic.2);
            }
            println!("outputs in {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Infer { lr, reference, model, out, config, sim_out } => {
            let cfg = load_config(config.as_deref())?;
            let g = pipeline::load_generator(&model_dir(&model))?;
            let source = FeatureSource::from_config(&cfg.features);
            let stem = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let stems = FeatureStems {
                lr_up: format!("{}_lrup", stem(&lr)),
                ref_blur: format!("{}_refblur", stem(&reference)),
                reference: stem(&reference),
            };
            let result = pipeline::infer(&read_png(&lr)?, &read_png(&reference)?, &g, &cfg, &source, &stems)?;
            write_png(&result.sr, &out)?;
            if let Some(p) = sim_out {
                let m = &result.texture.matched;
                let sim = m.weights();
                write_png(&reftex::ImageTensor::from_clamped(m.height(), m.width(), 1, sim)?, &p)?;
            }
            println!(
                "{}x{} -> {}x{}, mean similarity {:.4}",
                result.sr.width() / 4,
                result.sr.height() / 4,
                result.sr.width(),
                result.sr.height(),
                result.texture.matched.mean_similarity()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { manifest, results, out, config } => {
            let cfg = load_config(config.as_deref())?;
            let m = PairManifest::load(&manifest)?;
            let table = pipeline::evaluate(&results, &m, &FeatureSource::from_config(&cfg.features))?;
            table.write(&out)?;
            for (id, why) in &table.missing {
                eprintln!("pair {id} excluded: {why}");
            }
            if let Some((p, s, g)) = table.means() {
                println!("{} pairs  psnr {p:.3} dB  ssim {s:.4}  gram {g:.4e}", table.rows.len());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::DumpFallback { image, out, seed } => {
            let img = read_png(&image)?;
            let pyramid = FallbackExtractor::<f32>::new(seed).extract(&img)?;
            std::fs::create_dir_all(&out).map_err(|e| reftex::Error::Io { path: out.clone(), source: e })?;
            let stem = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
            for level in pyramid.levels() {
                let path = out.join(format!("{stem}.{}.tnsr", level.level()));
                level.save(&path)?;
                println!("{} {}x{}x{}", path.display(), level.channels(), level.height(), level.width());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
