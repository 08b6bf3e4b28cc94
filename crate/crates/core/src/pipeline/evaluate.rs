//! PSNR, SSIM and Gram texture distance for a directory of outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::read_png;
use crate::losses::gram_distance;
use crate::metrics::{psnr, ssim};
use crate::tensor::ImageTensor;

use super::manifest::{pair_id, Level, PairManifest};
use super::source::FeatureSource;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub pair_id: String,
    pub level: Option<Level>,
    pub psnr_db: f64,
    pub ssim: f64,
    pub gram_dist: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricRow>,
    /// Pairs without a usable output, with the reason.
    pub missing: Vec<(String, String)>,
}

impl MetricsTable {
    /// Means of `(psnr, ssim, gram)` over the evaluated rows.
    pub fn means(&self) -> Option<(f64, f64, f64)> {
        if self.rows.is_empty() {
            return None;
        }
        let n = self.rows.len() as f64;
        let sum = self.rows.iter().fold((0.0, 0.0, 0.0), |a, r| (a.0 + r.psnr_db, a.1 + r.ssim, a.2 + r.gram_dist));
        Some((sum.0 / n, sum.1 / n, sum.2 / n))
    }

    /// Per-pair rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("pair_id,level,psnr_db,ssim,gram_dist\n");
        for r in &self.rows {
            let level = r.level.map(|l| l.to_string()).unwrap_or_default();
            writeln!(s, "{},{level},{},{},{}", r.pair_id, r.psnr_db, r.ssim, r.gram_dist).unwrap();
        }
        if let Some((p, q, g)) = self.means() {
            writeln!(s, "mean,,{p},{q},{g}").unwrap();
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Path of the output for the `i`-th pair.
pub fn output_path(results: &Path, i: usize) -> PathBuf {
    results.join(format!("{}.png", pair_id(i)))
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Gram distance between two images at the source's matching level.
pub fn image_gram_distance(a: &ImageTensor, a_stem: &str, b: &ImageTensor, b_stem: &str, source: &FeatureSource) -> Result<f64> {
    gram_distance(&source.features(a, a_stem)?, &source.features(b, b_stem)?)
}

pub fn evaluate(results: &Path, manifest: &PairManifest, source: &FeatureSource) -> Result<MetricsTable> {
    let run = |(i, rec): (usize, &super::manifest::PairRecord)| -> std::result::Result<MetricRow, (String, String)> {
        let id = pair_id(i);
        let fail = |e: Error| (id.clone(), e.to_string());
        let path = output_path(results, i);
        if !path.is_file() {
            return Err((id.clone(), format!("{} not found", path.display())));
        }
        let sr = read_png(&path).map_err(fail)?.to_rgb();
        let hr = read_png(&rec.hr_path).map_err(fail)?.to_rgb();
        let reference = read_png(&rec.ref_path).map_err(fail)?.to_rgb();
        if sr.dims() != hr.dims() {
            return Err(fail(Error::shape(format!("output {:?} vs ground truth {:?}", sr.dims(), hr.dims()))));
        }
        let gram = image_gram_distance(&sr, &id, &reference, &stem(&rec.ref_path), source).map_err(fail)?;
        Ok(MetricRow {
            pair_id: id.clone(),
            level: rec.level,
            psnr_db: psnr(&sr, &hr).map_err(fail)?,
            ssim: ssim(&sr, &hr).map_err(fail)?,
            gram_dist: gram,
        })
    };
    #[cfg(feature = "parallel")]
    let results: Vec<_> = manifest.records.par_iter().enumerate().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = manifest.records.iter().enumerate().map(run).collect();

    let mut table = MetricsTable { rows: Vec::new(), missing: Vec::new() };
    for r in results {
        match r {
            Ok(row) => table.rows.push(row),
            Err(m) => table.missing.push(m),
        }
    }
    Ok(table)
}
