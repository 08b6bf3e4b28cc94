//! Procedural toy images and manifests.

use std::f32::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reftex::imaging::write_png;
use reftex::ImageTensor;

/// Oriented-grating texture. `seed` fixes the texture statistics, `variant`
/// shifts the phases so two variants share texture but not content.
pub fn texture_image(seed: u64, variant: u64, size: usize) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [f32; 3] = [rng.random_range(0.3..0.7), rng.random_range(0.3..0.7), rng.random_range(0.3..0.7)];
    let waves: Vec<(f32, f32, f32, [f32; 3])> = (0..3)
        .map(|_| {
            let angle = rng.random_range(0.0..TAU);
            let period = rng.random_range(2.5f32..9.0);
            let amp = rng.random_range(0.08f32..0.16);
            let tint = [rng.random_range(0.5..1.0), rng.random_range(0.5..1.0), rng.random_range(0.5..1.0)];
            (angle, TAU / period, amp, tint.map(|t: f32| t * amp))
        })
        .collect();
    let mut phase_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(variant));
    let phases: Vec<f32> = waves.iter().map(|_| phase_rng.random_range(0.0..TAU)).collect();
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            for c in 0..3 {
                let mut v = base[c];
                for ((angle, k, _, tint), ph) in waves.iter().zip(&phases) {
                    let t = (x as f32 * angle.cos() + y as f32 * angle.sin()) * k + ph;
                    v += tint[c] * t.sin();
                }
                data.push(v);
            }
        }
    }
    ImageTensor::from_clamped(size, size, 3, data).unwrap()
}

/// Uniform noise image.
pub fn noise_image(seed: u64, size: usize) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor::new(size, size, 3, (0..size * size * 3).map(|_| rng.random::<f32>()).collect()).unwrap()
}

/// Writes `n` HR/reference pairs and a manifest; returns the manifest path.
pub fn write_toy_set(dir: &Path, n: usize, size: usize, seed: u64) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let levels = ["XH", "H", "M", "L", "XL"];
    let mut manifest = String::new();
    for i in 0..n {
        let s = seed * 1000 + i as u64;
        write_png(&texture_image(s, 0, size), dir.join(format!("hr{i}.png"))).unwrap();
        write_png(&texture_image(s, 1, size), dir.join(format!("ref{i}.png"))).unwrap();
        manifest.push_str(&format!("hr{i}.png\tref{i}.png\t{}\n", levels[i % levels.len()]));
    }
    let path = dir.join("manifest.tsv");
    fs::write(&path, manifest).unwrap();
    path
}
