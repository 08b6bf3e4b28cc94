//! Writes a procedural 8-pair toy set and trains on it.
//!
//! `cargo run --release --example toy_train -- <out-dir> [key=value ...]`

#[allow(dead_code)]
#[path = "../tests/common/toy.rs"]
mod toy;

use std::path::PathBuf;
use std::time::Instant;

use reftex::pipeline::{train, PairManifest, RunConfig};

fn main() -> reftex::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "toy-run".into()));
    let manifest_path = toy::write_toy_set(&out.join("data"), 8, 64, 1);
    let overrides: Vec<String> = args.collect();
    let mut text = String::from(include_str!("toy.cfg"));
    for o in &overrides {
        text.push_str(o);
        text.push('\n');
    }
    let cfg = RunConfig::parse(&text, &out)?;
    let manifest = PairManifest::load(&manifest_path)?;
    let t = Instant::now();
    let report = train(&manifest, &cfg, &out.join("run"))?;
    let (first, last) = (report.rows[0].total, report.rows.last().unwrap().total);
    let sr = report.sr_metrics.means().unwrap();
    let bic = report.bicubic_metrics.means().unwrap();
    println!("{} steps in {:.1}s", report.steps(), t.elapsed().as_secs_f64());
    println!("total loss {first:.5} -> {last:.5} ({:.1}% drop)", 100.0 * (1.0 - last / first));
    println!("psnr  sr {:.3} dB  bicubic {:.3} dB  gain {:.3} dB", sr.0, bic.0, sr.0 - bic.0);
    println!("gram  sr {:.5e}  bicubic {:.5e}", sr.2, bic.2);
    Ok(())
}
