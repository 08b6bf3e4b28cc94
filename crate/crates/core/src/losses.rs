//! Reconstruction, perceptual, adversarial and texture losses, the weighted
//! objective, and the Gram texture distance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::nn::{Critic, Grads};
use crate::tensor::{Scalar, Tensor};

/// Weights of the perceptual, adversarial and texture terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 1e-4, beta: 1e-6, lambda: 1e-4 }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights { alpha: 0.0, beta: 0.0, lambda: 0.0 };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("lambda", self.lambda)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("loss weight {name}={v} must be finite and ≥ 0")));
            }
        }
        Ok(())
    }
}

/// Mean absolute error and its subgradient `sign(sr − hr) / N` (`sign(0) = 0`).
pub fn loss_rec<T: Scalar>(sr: &Tensor<T>, hr: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    sr.expect_same_shape(hr)?;
    if sr.is_empty() {
        return Err(Error::invalid("empty image"));
    }
    let n = T::from_usize(sr.len()).unwrap();
    let value = sr.data().iter().zip(hr.data()).map(|(&a, &b)| (a - b).abs()).sum::<T>() / n;
    let grad = sr.zip_map(hr, |a, b| {
        let d = a - b;
        if d > T::zero() {
            T::one() / n
        } else if d < T::zero() {
            -T::one() / n
        } else {
            T::zero()
        }
    })?;
    Ok((value, grad))
}

/// Sum over channels of the Frobenius norm of the feature residual, divided by
/// the tensor volume. A channel with zero residual contributes zero gradient.
pub fn loss_per<T: Scalar>(phi_sr: &Tensor<T>, phi_hr: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    phi_sr.expect_same_shape(phi_hr)?;
    let (c, h, w) = phi_sr.chw()?;
    let plane = h * w;
    let volume = T::from_usize(c * plane).unwrap();
    let mut value = T::zero();
    let mut grad = Tensor::zeros(phi_sr.shape());
    for ch in 0..c {
        let s = &phi_sr.data()[ch * plane..(ch + 1) * plane];
        let r = &phi_hr.data()[ch * plane..(ch + 1) * plane];
        let norm = s.iter().zip(r).map(|(&a, &b)| (b - a) * (b - a)).sum::<T>().sqrt();
        value += norm;
        if norm > T::zero() {
            let g = &mut grad.data_mut()[ch * plane..(ch + 1) * plane];
            for i in 0..plane {
                g[i] = (s[i] - r[i]) / (norm * volume);
            }
        }
    }
    Ok((value / volume, grad))
}

/// `F·Fᵀ` of the `C×(H·W)` unrolling, row-major `C×C`.
pub fn gram<T: Scalar>(f: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = f.chw()?;
    let n = h * w;
    if c == 0 || n == 0 {
        return Err(Error::invalid("gram of an empty map"));
    }
    let mut g = vec![T::zero(); c * c];
    T::gemm(c, n, c, T::one(), f.data(), n as isize, 1, f.data(), 1, n as isize, T::zero(), &mut g, c as isize, 1);
    // Exact symmetry regardless of the product kernel's summation order.
    for i in 0..c {
        for j in i + 1..c {
            g[j * c + i] = g[i * c + j];
        }
    }
    Tensor::from_vec_unchecked(&[c, c], g)
}

fn frobenius<T: Scalar>(t: &Tensor<T>) -> T {
    t.data().iter().map(|&v| v * v).sum::<T>().sqrt()
}

/// Texture loss `‖Gr(φ ⊗ s) − Gr(M_t)‖_F / (4V²)` with `V = C·H·W`.
///
/// `sim` is a `1×H×W` weight map broadcast over channels.
pub fn loss_texture<T: Scalar>(phi_sr: &Tensor<T>, sim: &Tensor<T>, m_t: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    phi_sr.expect_same_shape(m_t)?;
    let (c, h, w) = phi_sr.chw()?;
    if sim.shape() != [1, h, w] {
        return Err(Error::shape(format!("similarity map {:?} does not cover the {h}×{w} grid", sim.shape())));
    }
    let plane = h * w;
    let mut weighted = phi_sr.clone();
    for ch in 0..c {
        for (v, &s) in weighted.data_mut()[ch * plane..(ch + 1) * plane].iter_mut().zip(sim.data()) {
            *v *= s;
        }
    }
    let volume = T::from_usize(c * plane).unwrap();
    let scale = T::one() / (T::from_f64_lossy(4.0) * volume * volume);
    let mut diff = gram(&weighted)?;
    diff.axpy(-T::one(), &gram(m_t)?)?;
    let norm = frobenius(&diff);
    let value = scale * norm;

    let mut grad = Tensor::zeros(phi_sr.shape());
    if norm > T::zero() {
        // d‖D‖/dX = 2·D·X/‖D‖ for symmetric D, then chain through the weighting.
        let coef = T::from_f64_lossy(2.0) * scale / norm;
        T::gemm(c, c, plane, coef, diff.data(), c as isize, 1, weighted.data(), plane as isize, 1, T::zero(), grad.data_mut(), plane as isize, 1);
        for ch in 0..c {
            for (g, &s) in grad.data_mut()[ch * plane..(ch + 1) * plane].iter_mut().zip(sim.data()) {
                *g *= s;
            }
        }
    }
    Ok((value, grad))
}

/// Texture distance `‖Gr(a) − Gr(b)‖_F` between two maps with equal channel counts.
pub fn gram_distance<T: Scalar>(a: &FeatureMap<T>, b: &FeatureMap<T>) -> Result<f64> {
    if a.channels() != b.channels() {
        return Err(Error::shape(format!("{} vs {} channels", a.channels(), b.channels())));
    }
    let mut d = gram(a.tensor())?;
    d.axpy(-T::one(), &gram(b.tensor())?)?;
    Ok(frobenius(&d).to_f64().unwrap())
}

/// `(critic_core, gen_adv)` = `(mean D(fake) − mean D(real), −mean D(fake))`.
pub fn wgan_losses<T: Scalar>(d_real: &[T], d_fake: &[T]) -> Result<(T, T)> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::invalid("critic scores for an empty batch"));
    }
    let mean = |s: &[T]| s.iter().copied().sum::<T>() / T::from_usize(s.len()).unwrap();
    let fake = mean(d_fake);
    Ok((fake - mean(d_real), -fake))
}

/// WGAN-GP penalty `w · mean_b (‖∇D(x̂_b)‖ − 1)²` on seeded interpolates
/// `x̂ = ε·real + (1−ε)·fake`, and its exact critic-parameter gradient.
pub fn gradient_penalty<T: Scalar>(
    critic: &Critic<T>,
    real: &[Tensor<T>],
    fake: &[Tensor<T>],
    gp_weight: f64,
    seed: u64,
) -> Result<(T, Grads<T>)> {
    if real.is_empty() || real.len() != fake.len() {
        return Err(Error::invalid(format!("{} real vs {} fake samples", real.len(), fake.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = T::from_f64_lossy(gp_weight) / T::from_usize(real.len()).unwrap();
    let mut total = T::zero();
    let mut grads = critic.params().zero_grads();
    for (r, f) in real.iter().zip(fake) {
        let eps = T::from_f64_lossy(rng.random::<f64>());
        let x_hat = r.zip_map(f, |a, b| eps * a + (T::one() - eps) * b)?;
        let (p, g) = critic.penalty_and_grads(&x_hat)?;
        total += scale * p;
        grads.axpy(scale, &g)?;
    }
    Ok((total, grads))
}

/// One term of the objective: its value and its gradient with respect to the output image.
#[derive(Debug, Clone)]
pub struct LossTerm<T: Scalar> {
    pub value: T,
    pub grad: Option<Tensor<T>>,
}

impl<T: Scalar> LossTerm<T> {
    pub fn zero() -> Self {
        LossTerm { value: T::zero(), grad: None }
    }

    pub fn value(value: T) -> Self {
        LossTerm { value, grad: None }
    }
}

#[derive(Debug, Clone)]
pub struct LossComponents<T: Scalar> {
    pub rec: LossTerm<T>,
    pub per: LossTerm<T>,
    pub adv: LossTerm<T>,
    pub tex: LossTerm<T>,
}

#[derive(Debug, Clone)]
pub struct LossBundle<T: Scalar> {
    pub rec: T,
    pub per: T,
    pub adv: T,
    pub tex: T,
    pub total: T,
    /// Weighted sum of the component gradients, when any was supplied.
    pub grad_sr: Option<Tensor<T>>,
}

/// `rec + α·per + β·adv + λ·tex`, with gradients combined by the same weights.
pub fn total_loss<T: Scalar>(c: &LossComponents<T>, w: &LossWeights) -> Result<LossBundle<T>> {
    let terms = [
        (&c.rec, T::one()),
        (&c.per, T::from_f64_lossy(w.alpha)),
        (&c.adv, T::from_f64_lossy(w.beta)),
        (&c.tex, T::from_f64_lossy(w.lambda)),
    ];
    let mut total = T::zero();
    let mut grad: Option<Tensor<T>> = None;
    for (term, weight) in terms {
        total += weight * term.value;
        if let Some(g) = &term.grad {
            match grad.as_mut() {
                Some(acc) => acc.axpy(weight, g)?,
                None => {
                    let mut first = g.clone();
                    first.scale(weight);
                    grad = Some(first);
                }
            }
        }
    }
    Ok(LossBundle { rec: c.rec.value, per: c.per.value, adv: c.adv.value, tex: c.tex.value, total, grad_sr: grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::LayerSpec;
    use crate::nn::testutil::{assert_close, numeric_grad, random_tensor};

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn rec_examples() {
        let a = random_tensor::<f64>(&[3, 4, 4], 1);
        assert_eq!(loss_rec(&a, &a).unwrap().0, 0.0);
        let (v, _) = loss_rec(&Tensor::zeros(&[3, 2, 2]), &Tensor::full(&[3, 2, 2], 1.0)).unwrap();
        assert_eq!(v, 1.0);
        let (v, g) = loss_rec(&t(&[1, 1, 2], vec![0.5, 0.5]), &t(&[1, 1, 2], vec![0.2, 0.8])).unwrap();
        assert!((v - 0.3).abs() < 1e-15);
        assert_eq!(g.data(), &[0.5, -0.5]);
        assert!(loss_rec(&a, &random_tensor(&[3, 4, 5], 2)).is_err());
    }

    #[test]
    fn per_examples() {
        let a = random_tensor::<f64>(&[2, 3, 3], 1);
        assert_eq!(loss_per(&a, &a).unwrap().0, 0.0);
        let (v, _) = loss_per(&t(&[1, 1, 1], vec![1.0]), &t(&[1, 1, 1], vec![3.0])).unwrap();
        assert_eq!(v, 2.0);
        // Residual norms 3 and 4 on a 2×1×2 map: V = 4.
        let sr = t(&[2, 1, 2], vec![0.0, 0.0, 0.0, 0.0]);
        let hr = t(&[2, 1, 2], vec![3.0, 0.0, 0.0, 4.0]);
        assert_eq!(loss_per(&sr, &hr).unwrap().0, 7.0 / 4.0);
    }

    #[test]
    fn per_zero_residual_channel_has_zero_gradient() {
        let sr = t(&[2, 1, 2], vec![1.0, 2.0, 0.0, 0.0]);
        let hr = t(&[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let (_, g) = loss_per(&sr, &hr).unwrap();
        assert_eq!(&g.data()[..2], &[0.0, 0.0]);
    }

    #[test]
    fn gram_examples() {
        let g = gram(&t(&[2, 1, 1], vec![2.0, 3.0])).unwrap();
        assert_eq!(g.data(), &[4.0, 6.0, 6.0, 9.0]);
        assert!(gram(&Tensor::<f64>::zeros(&[3, 2, 2])).unwrap().data().iter().all(|&v| v == 0.0));
        let g = gram(&t(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(g.data(), &[30.0]);
    }

    #[test]
    fn texture_examples() {
        let phi = random_tensor::<f64>(&[3, 4, 4], 3);
        let ones = Tensor::full(&[1, 4, 4], 1.0);
        assert_eq!(loss_texture(&phi, &ones, &phi).unwrap().0, 0.0);

        let zeros = Tensor::zeros(&[1, 4, 4]);
        let mt = random_tensor::<f64>(&[3, 4, 4], 4);
        let (v, g) = loss_texture(&phi, &zeros, &mt).unwrap();
        let v_count = 48.0f64;
        let expected = gram_distance(
            &FeatureMap::new(Tensor::zeros(&[3, 4, 4]), "x").unwrap(),
            &FeatureMap::new(mt.clone(), "x").unwrap(),
        )
        .unwrap()
            / (4.0 * v_count * v_count);
        assert!((v - expected).abs() < 1e-15);
        assert!(g.data().iter().all(|&x| x == 0.0));
        let num = numeric_grad(&phi, |p| loss_texture(p, &zeros, &mt).unwrap().0);
        assert!(num.data().iter().all(|&x| x.abs() < 1e-12));

        // Two channels, 1×1, against a zero texture map: ‖[[4,6],[6,9]]‖ = 13, V = 2.
        let phi = t(&[2, 1, 1], vec![2.0, 3.0]);
        let (v, _) = loss_texture(&phi, &t(&[1, 1, 1], vec![1.0]), &Tensor::zeros(&[2, 1, 1])).unwrap();
        assert!((v - 13.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn feature_loss_gradients_match_finite_differences() {
        for seed in 0..3 {
            let shape = [4, 8 - 2 * seed as usize, 8];
            let sr = random_tensor::<f64>(&shape, 10 + seed);
            let hr = random_tensor::<f64>(&shape, 20 + seed);
            let sim = random_tensor::<f64>(&[1, shape[1], shape[2]], 30 + seed).map(|v| v.abs());
            let (_, g) = loss_rec(&sr, &hr).unwrap();
            assert_close(&g, &numeric_grad(&sr, |p| loss_rec(p, &hr).unwrap().0), 1e-6);
            let (_, g) = loss_per(&sr, &hr).unwrap();
            assert_close(&g, &numeric_grad(&sr, |p| loss_per(p, &hr).unwrap().0), 1e-6);
            let (_, g) = loss_texture(&sr, &sim, &hr).unwrap();
            assert_close(&g, &numeric_grad(&sr, |p| loss_texture(p, &sim, &hr).unwrap().0), 1e-6);
        }
    }

    #[test]
    fn gram_is_symmetric_psd() {
        let f = random_tensor::<f64>(&[5, 3, 4], 7);
        let g = gram(&f).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(g.data()[i * 5 + j], g.data()[j * 5 + i]);
            }
        }
        // xᵀGx = ‖Fᵀx‖² ≥ 0 for random directions.
        for s in 0..20 {
            let x = random_tensor::<f64>(&[5], 100 + s);
            let q: f64 = (0..5).flat_map(|i| (0..5).map(move |j| (i, j))).map(|(i, j)| x.data()[i] * g.data()[i * 5 + j] * x.data()[j]).sum();
            assert!(q >= -1e-10);
        }
    }

    #[test]
    fn wgan_examples() {
        assert_eq!(wgan_losses(&[0.0], &[2.0f64, 4.0]).unwrap().1, -3.0);
        assert_eq!(wgan_losses(&[1.5f64, 2.5], &[1.5, 2.5]).unwrap().0, 0.0);
        assert_eq!(wgan_losses(&[1.0f64], &[0.0]).unwrap().0, -1.0);
        assert!(wgan_losses::<f64>(&[], &[1.0]).is_err());
    }

    #[test]
    fn penalty_of_sum_critic() {
        // D(x) = Σx via a 2×2 all-ones kernel on a 1×2×2 input.
        let spec = [LayerSpec::Conv2d { in_c: 1, out_c: 1, kernel: 2, stride: 1, pad: 0 }];
        let mut c = Critic::<f64>::from_specs(&spec, 0).unwrap();
        c.params_mut().params_mut()[0].value.data_mut().fill(1.0);
        c.params_mut().params_mut()[1].value.data_mut().fill(0.0);
        let real = vec![random_tensor::<f64>(&[1, 2, 2], 1), random_tensor(&[1, 2, 2], 2)];
        let fake = vec![random_tensor::<f64>(&[1, 2, 2], 3), random_tensor(&[1, 2, 2], 4)];
        let (v, _) = gradient_penalty(&c, &real, &fake, 10.0, 5).unwrap();
        assert!((v - 10.0).abs() < 1e-12);
    }

    #[test]
    fn penalty_of_identity_critic() {
        let spec = [LayerSpec::Conv2d { in_c: 1, out_c: 1, kernel: 1, stride: 1, pad: 0 }];
        let mut c = Critic::<f64>::from_specs(&spec, 0).unwrap();
        c.params_mut().params_mut()[0].value.data_mut().fill(1.0);
        let (v, g) = gradient_penalty(&c, &[t(&[1, 1, 1], vec![0.3])], &[t(&[1, 1, 1], vec![-0.6])], 10.0, 1).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.tensors.iter().all(|t| t.data().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn penalty_gradients_match_finite_differences() {
        let mut c = Critic::<f64>::standard(2, 3, 9);
        for p in c.params_mut().params_mut() {
            p.value = random_tensor(p.value.shape(), 40 + p.value.len() as u64);
        }
        let real = vec![random_tensor::<f64>(&[2, 6, 6], 1), random_tensor(&[2, 6, 6], 2)];
        let fake = vec![random_tensor::<f64>(&[2, 6, 6], 3), random_tensor(&[2, 6, 6], 4)];
        let (_, grads) = gradient_penalty(&c, &real, &fake, 10.0, 7).unwrap();
        for (i, p) in c.params().params().iter().enumerate() {
            let num = numeric_grad(&p.value, |t| {
                let mut q = c.clone();
                q.params_mut().params_mut()[i].value = t.clone();
                gradient_penalty(&q, &real, &fake, 10.0, 7).unwrap().0
            });
            assert_close(&grads.tensors[i], &num, 1e-4);
        }
    }

    #[test]
    fn total_loss_examples() {
        let comps = |r: f64, p: f64, a: f64, x: f64| LossComponents {
            rec: LossTerm::value(r),
            per: LossTerm::value(p),
            adv: LossTerm::value(a),
            tex: LossTerm::value(x),
        };
        let b = total_loss(&comps(1.0, 0.0, 0.0, 0.0), &LossWeights { alpha: 3.0, beta: 5.0, lambda: 7.0 }).unwrap();
        assert_eq!(b.total, 1.0);
        let b = total_loss(&comps(0.1, 10.0, 100.0, 5.0), &LossWeights::default()).unwrap();
        assert!((b.total - 0.1016).abs() < 1e-12 * 0.1016);
        assert_eq!(total_loss(&comps(0.0, 0.0, 0.0, 0.0), &LossWeights::default()).unwrap().total, 0.0);
    }

    #[test]
    fn total_loss_combines_gradients_linearly() {
        let g = |s| Some(random_tensor::<f64>(&[1, 2, 2], s));
        let c = LossComponents {
            rec: LossTerm { value: 1.0, grad: g(1) },
            per: LossTerm { value: 2.0, grad: g(2) },
            adv: LossTerm { value: 3.0, grad: None },
            tex: LossTerm { value: 4.0, grad: g(4) },
        };
        let w = LossWeights { alpha: 0.5, beta: 0.25, lambda: 2.0 };
        let b = total_loss(&c, &w).unwrap();
        let mut expected = c.rec.grad.clone().unwrap();
        expected.axpy(0.5, c.per.grad.as_ref().unwrap()).unwrap();
        expected.axpy(2.0, c.tex.grad.as_ref().unwrap()).unwrap();
        assert_eq!(b.grad_sr.unwrap(), expected);
        assert_eq!(b.total, 1.0 + 0.5 * 2.0 + 0.25 * 3.0 + 2.0 * 4.0);
    }
}
