//! Finite-difference helpers shared by the unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Scalar, Tensor};

pub fn random_tensor<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(rng.random_range(-1.0..1.0))).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Central differences of a scalar function, evaluated in `f64`.
pub fn numeric_grad<T: Scalar>(x: &Tensor<T>, f: impl Fn(&Tensor<T>) -> f64) -> Tensor<f64> {
    let h = if T::DTYPE == crate::tensor::Dtype::F64 { 1e-6 } else { 1e-2 };
    let mut probe = x.clone();
    let mut out = vec![0.0; x.len()];
    for (i, slot) in out.iter_mut().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + T::from_f64_lossy(h);
        let up = f(&probe);
        probe.data_mut()[i] = orig - T::from_f64_lossy(h);
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        *slot = (up - down) / (2.0 * h);
    }
    Tensor::from_vec(x.shape(), out).unwrap()
}

/// Relative error in the 2-norm.
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

#[track_caller]
pub fn assert_close<T: Scalar>(analytic: &Tensor<T>, numeric: &Tensor<f64>, tol: f64) {
    let err = rel_error(analytic, numeric);
    assert!(err <= tol, "relative gradient error {err:.3e} exceeds {tol:.0e}");
}
