//! Helpers shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

pub mod grad;
pub mod toy;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reftex::{Scalar, Tensor};

pub fn random_tensor<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(rng.random_range(-1.0..1.0))).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Central differences of a scalar function, `h = 1e-6`.
pub fn numeric_grad(x: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let h = 1e-6;
    let mut probe = x.clone();
    let mut out = vec![0.0; x.len()];
    for (i, slot) in out.iter_mut().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        *slot = (up - down) / (2.0 * h);
    }
    Tensor::from_vec(x.shape(), out).unwrap()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_error<T: Scalar>(analytic: &Tensor<T>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (a, &b) in analytic.data().iter().zip(numeric.data()) {
        let a = a.to_f64().unwrap();
        diff += (a - b) * (a - b);
        na += a * a;
        nb += b * b;
    }
    let denom = na.sqrt().max(nb.sqrt());
    if denom == 0.0 {
        0.0
    } else {
        diff.sqrt() / denom
    }
}

/// `Σ a·b` in `f64`.
pub fn dot<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (*x * *y).to_f64().unwrap()).sum()
}
