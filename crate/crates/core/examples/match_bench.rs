//! Times the matcher on 256×40×40 feature maps.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reftex::matcher::{match_features_with_workers, MatchConfig};
use reftex::FeatureMap;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut map = || FeatureMap::from_vec(256, 40, 40, (0..256 * 1600).map(|_| rng.random::<f32>()).collect(), "L3").unwrap();
    let (a, b) = (map(), map());
    let cfg = MatchConfig::default();
    for workers in [1, 4] {
        let t = Instant::now();
        let m = match_features_with_workers(&a, &b, &cfg, workers).unwrap();
        println!("{workers} worker(s): {:.3}s (mean sim {:.4})", t.elapsed().as_secs_f64(), m.mean_similarity());
    }
}
