//! Finite-difference checks for every layer and loss, returned as named
//! relative errors so the same suite backs both the gradient tests and the
//! acceptance harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reftex::losses::{gradient_penalty, loss_per, loss_rec, loss_texture, LossWeights};
use reftex::nn::critic::Critic;
use reftex::nn::layers::ResBlock;
use reftex::nn::{ops, residual_block_backward, residual_block_forward, Generator, GeneratorConfig, ModelParams, ParamGroup};
use reftex::{FallbackExtractor, Scalar, Tensor};

use super::{dot, numeric_grad, random_tensor, rel_error};

pub const DOUBLE_TOL: f64 = 1e-6;
pub const SINGLE_TOL: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub err: f64,
}

impl Check {
    fn new(name: impl Into<String>, err: f64) -> Self {
        Check { name: name.into(), err }
    }
}

fn flatten<T: Scalar>(ts: &[Tensor<T>]) -> Tensor<T> {
    let data: Vec<T> = ts.iter().flat_map(|t| t.data().iter().copied()).collect();
    let n = data.len();
    Tensor::from_vec(&[n], data).unwrap()
}

/// Central differences over every parameter of a model.
fn numeric_param_grads<M: Clone>(
    model: &M,
    params: impl Fn(&mut M) -> &mut ModelParams<f64>,
    f: impl Fn(&M) -> f64,
) -> Vec<Tensor<f64>> {
    let h = 1e-6;
    let mut probe = model.clone();
    let count = params(&mut probe).len();
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let len = params(&mut probe).params()[k].value.len();
        let mut g = vec![0.0; len];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = params(&mut probe).params()[k].value.data()[i];
            params(&mut probe).params_mut()[k].value.data_mut()[i] = orig + h;
            let up = f(&probe);
            params(&mut probe).params_mut()[k].value.data_mut()[i] = orig - h;
            let down = f(&probe);
            params(&mut probe).params_mut()[k].value.data_mut()[i] = orig;
            *gi = (up - down) / (2.0 * h);
        }
        out.push(Tensor::from_vec(params(&mut probe).params()[k].value.shape(), g).unwrap());
    }
    out
}

struct Shapes(ChaCha8Rng);

impl Shapes {
    fn new(seed: u64) -> Self {
        Shapes(ChaCha8Rng::seed_from_u64(seed))
    }

    fn channels(&mut self) -> usize {
        self.0.random_range(1..=4)
    }

    fn extent(&mut self) -> usize {
        self.0.random_range(3..=8)
    }

    fn even_extent(&mut self) -> usize {
        2 * self.0.random_range(1..=4)
    }
}

pub fn conv2d(seed: u64) -> Vec<Check> {
    let mut s = Shapes::new(seed);
    let mut out = Vec::new();
    for (k, stride) in [(3, 1), (3, 2), (1, 1)] {
        let (ci, co, h, w) = (s.channels(), s.channels(), s.extent(), s.extent());
        let x = random_tensor::<f64>(&[ci, h, w], seed + 1);
        let wt = random_tensor::<f64>(&[co, ci, k, k], seed + 2);
        let b = random_tensor::<f64>(&[co], seed + 3);
        let pad = k / 2;
        let y = ops::conv2d_forward(&x, &wt, Some(&b), stride, pad).unwrap();
        let r = random_tensor::<f64>(y.shape(), seed + 4);
        let g = ops::conv2d_backward(&x, &wt, &r, stride, pad).unwrap();
        let loss = |x: &Tensor<f64>, wt: &Tensor<f64>, b: &Tensor<f64>| dot(&ops::conv2d_forward(x, wt, Some(b), stride, pad).unwrap(), &r);
        let tag = format!("conv2d k{k} s{stride}");
        out.push(Check::new(format!("{tag} input"), rel_error(&g.x, &numeric_grad(&x, |x| loss(x, &wt, &b)))));
        out.push(Check::new(format!("{tag} weight"), rel_error(&g.w, &numeric_grad(&wt, |wt| loss(&x, wt, &b)))));
        out.push(Check::new(format!("{tag} bias"), rel_error(&g.b, &numeric_grad(&b, |b| loss(&x, &wt, b)))));
    }
    out
}

pub fn activations(seed: u64) -> Vec<Check> {
    let mut s = Shapes::new(seed);
    let shape = [s.channels(), s.extent(), s.extent()];
    let x = random_tensor::<f64>(&shape, seed + 1);
    let r = random_tensor::<f64>(&shape, seed + 2);
    let relu = ops::relu_backward(&x, &r).unwrap();
    let slope = 0.2;
    let leaky = ops::leaky_relu_backward(&x, &r, slope).unwrap();
    vec![
        Check::new("relu", rel_error(&relu, &numeric_grad(&x, |x| dot(&ops::relu(x), &r)))),
        Check::new("leaky_relu", rel_error(&leaky, &numeric_grad(&x, |x| dot(&ops::leaky_relu(x, slope), &r)))),
    ]
}

pub fn reshaping(seed: u64) -> Vec<Check> {
    let mut s = Shapes::new(seed);
    let (c, h, w) = (s.channels(), s.even_extent(), s.even_extent());

    let x = random_tensor::<f64>(&[4 * c, h, w], seed + 1);
    let r = random_tensor::<f64>(&[c, 2 * h, 2 * w], seed + 2);
    let shuffle = ops::pixel_unshuffle(&r, 2).unwrap();
    let shuffle_fd = numeric_grad(&x, |x| dot(&ops::pixel_shuffle(x, 2).unwrap(), &r));

    let x = random_tensor::<f64>(&[c, h, w], seed + 3);
    let r = random_tensor::<f64>(&[c, h / 2, w / 2], seed + 4);
    let pool = ops::avg_pool2_backward(&r).unwrap();
    let pool_fd = numeric_grad(&x, |x| dot(&ops::avg_pool2(x).unwrap(), &r));

    let c2 = s.channels();
    let a = random_tensor::<f64>(&[c, h, w], seed + 5);
    let b = random_tensor::<f64>(&[c2, h, w], seed + 6);
    let r = random_tensor::<f64>(&[c + c2, h, w], seed + 7);
    let (ga, gb) = ops::split_channels(&r, c).unwrap();
    let fa = numeric_grad(&a, |a| dot(&ops::concat_channels(a, &b).unwrap(), &r));
    let fb = numeric_grad(&b, |b| dot(&ops::concat_channels(&a, b).unwrap(), &r));

    vec![
        Check::new("pixel_shuffle", rel_error(&shuffle, &shuffle_fd)),
        Check::new("avg_pool2", rel_error(&pool, &pool_fd)),
        Check::new("concat/split first", rel_error(&ga, &fa)),
        Check::new("concat/split second", rel_error(&gb, &fb)),
    ]
}

#[derive(Clone)]
struct Block {
    p: ModelParams<f64>,
    blk: ResBlock,
}

pub fn residual_block(seed: u64) -> Vec<Check> {
    let mut s = Shapes::new(seed);
    let (c, h, w) = (s.channels(), s.extent(), s.extent());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::<f64>::new();
    let blk = ResBlock::new(&mut p, "blk", ParamGroup::Content, c, &mut rng);
    // Undo the small init so the residual branch carries a comparable gradient.
    p.get_mut(blk.conv2.w).scale(10.0);
    let model = Block { p, blk };
    let x = random_tensor::<f64>(&[c, h, w], seed + 1);
    let r = random_tensor::<f64>(&[c, h, w], seed + 2);
    let loss = |m: &Block, x: &Tensor<f64>| dot(&residual_block_forward(&m.blk, &m.p, x).unwrap().0, &r);

    let (_, trace) = residual_block_forward(&model.blk, &model.p, &x).unwrap();
    let mut grads = model.p.zero_grads();
    let gx = residual_block_backward(&model.blk, &model.p, &trace, &r, &mut grads).unwrap();
    let fd_params = numeric_param_grads(&model, |m| &mut m.p, |m| loss(m, &x));
    vec![
        Check::new("residual block input", rel_error(&gx, &numeric_grad(&x, |x| loss(&model, x)))),
        Check::new("residual block params", rel_error(&flatten(&grads.tensors), &flatten(&fd_params))),
    ]
}

pub fn critic(seed: u64) -> Vec<Check> {
    let mut s = Shapes::new(seed);
    let (h, w) = (s.even_extent().max(4), s.even_extent().max(4));
    let critic = Critic::<f64>::standard(3, 4, seed);
    let x = random_tensor::<f64>(&[3, h, w], seed + 1);
    let (_, trace) = critic.forward(&x).unwrap();
    let (grads, gx) = critic.backward(&trace, 1.0).unwrap();
    let fd_params = numeric_param_grads(&critic, |c| c.params_mut(), |c| c.score(&x).unwrap());
    vec![
        Check::new("critic input", rel_error(&gx, &numeric_grad(&x, |x| critic.score(x).unwrap()))),
        Check::new("critic params", rel_error(&flatten(&grads.tensors), &flatten(&fd_params))),
    ]
}

pub fn extractor(seed: u64) -> Vec<Check> {
    let ex = FallbackExtractor::<f64>::new(seed);
    let x = random_tensor::<f64>(&[3, 8, 8], seed + 1);
    let (pyr, trace) = ex.forward(&x).unwrap();
    let rs: Vec<Tensor<f64>> =
        pyr.levels().iter().enumerate().map(|(i, l)| random_tensor(l.tensor().shape(), seed + 10 + i as u64)).collect();
    let g = ex.backward(&trace, &rs.iter().map(Some).collect::<Vec<_>>()).unwrap();
    let fd = numeric_grad(&x, |x| {
        let (p, _) = ex.forward(x).unwrap();
        p.levels().iter().zip(&rs).map(|(l, r)| dot(l.tensor(), r)).sum()
    });
    vec![Check::new("fallback extractor input", rel_error(&g, &fd))]
}

pub fn losses(seed: u64) -> Vec<Check> {
    let mut s = Shapes::new(seed);
    let (c, h, w) = (s.channels(), s.extent(), s.extent());
    let a = random_tensor::<f64>(&[c, h, w], seed + 1);
    let b = random_tensor::<f64>(&[c, h, w], seed + 2);
    let (_, g_rec) = loss_rec(&a, &b).unwrap();
    let (_, g_per) = loss_per(&a, &b).unwrap();

    let sim = random_tensor::<f64>(&[1, h, w], seed + 3).map(|v| v.abs());
    let (_, g_tex) = loss_texture(&a, &sim, &b).unwrap();

    // Generator-side adversarial term −D(x) through a critic.
    let (eh, ew) = (s.even_extent().max(4), s.even_extent().max(4));
    let critic = Critic::<f64>::standard(3, 4, seed + 4);
    let x = random_tensor::<f64>(&[3, eh, ew], seed + 5);
    let (_, trace) = critic.forward(&x).unwrap();
    let (_, g_adv) = critic.backward(&trace, -1.0).unwrap();

    let real: Vec<Tensor<f64>> = (0..2).map(|i| random_tensor(&[3, eh, ew], seed + 20 + i)).collect();
    let fake: Vec<Tensor<f64>> = (0..2).map(|i| random_tensor(&[3, eh, ew], seed + 30 + i)).collect();
    let (_, g_gp) = gradient_penalty(&critic, &real, &fake, 10.0, seed).unwrap();
    let fd_gp = numeric_param_grads(&critic, |c| c.params_mut(), |c| gradient_penalty(c, &real, &fake, 10.0, seed).unwrap().0);

    vec![
        Check::new("reconstruction loss", rel_error(&g_rec, &numeric_grad(&a, |a| loss_rec(a, &b).unwrap().0))),
        Check::new("perceptual loss", rel_error(&g_per, &numeric_grad(&a, |a| loss_per(a, &b).unwrap().0))),
        Check::new("texture loss", rel_error(&g_tex, &numeric_grad(&a, |a| loss_texture(a, &sim, &b).unwrap().0))),
        Check::new("adversarial loss", rel_error(&g_adv, &numeric_grad(&x, |x| -critic.score(x).unwrap()))),
        Check::new("gradient penalty", rel_error(&flatten(&g_gp.tensors), &flatten(&fd_gp))),
    ]
}

/// Every double-precision layer and loss check.
pub fn layer_and_loss_checks(seed: u64) -> Vec<Check> {
    [conv2d, activations, reshaping, residual_block, critic, extractor, losses]
        .iter()
        .enumerate()
        .flat_map(|(i, f)| f(seed.wrapping_add(100 * i as u64)))
        .collect()
}

/// Inputs of one full-objective evaluation on an `8×8` LR toy.
pub struct ToyProblem<T: Scalar> {
    pub generator: Generator<T>,
    pub critic: Critic<T>,
    pub extractor: FallbackExtractor<T>,
    pub lr: Tensor<T>,
    pub m_t: Tensor<T>,
    pub sim: Tensor<T>,
    pub hr: Tensor<T>,
    pub phi_hr: Tensor<T>,
    pub weights: LossWeights,
}

impl ToyProblem<f32> {
    pub fn new(seed: u64) -> Self {
        let extractor = FallbackExtractor::<f32>::new(seed);
        let cfg = GeneratorConfig { image_channels: 3, texture_channels: 64, width: 8, content_blocks: 1, transfer_blocks: 1 };
        let hr = random_tensor::<f32>(&[3, 32, 32], seed + 1).map(|v| 0.5 + 0.5 * v);
        let phi_hr = extractor.forward(&hr).unwrap().0.deepest().tensor().clone();
        ToyProblem {
            generator: Generator::new(cfg, seed + 2),
            critic: Critic::standard(3, 4, seed + 3),
            lr: random_tensor::<f32>(&[3, 8, 8], seed + 4).map(|v| 0.5 + 0.5 * v),
            m_t: random_tensor::<f32>(&[64, 8, 8], seed + 5).map(|v| v.abs()),
            sim: random_tensor::<f32>(&[1, 8, 8], seed + 6).map(|v| v.abs()),
            hr,
            phi_hr,
            extractor,
            weights: LossWeights::default(),
        }
    }

    pub fn to_f64(&self) -> ToyProblem<f64> {
        ToyProblem {
            generator: self.generator.cast(),
            critic: self.critic.cast(),
            extractor: self.extractor.cast(),
            lr: self.lr.cast(),
            m_t: self.m_t.cast(),
            sim: self.sim.cast(),
            hr: self.hr.cast(),
            phi_hr: self.phi_hr.cast(),
            weights: self.weights,
        }
    }
}

impl<T: Scalar> ToyProblem<T> {
    /// `rec + α·per + β·adv + λ·tex` on the generator output.
    pub fn objective(&self, g: &Generator<T>) -> f64 {
        let w = &self.weights;
        let (out, _) = g.forward(&self.lr, &self.m_t).unwrap();
        let phi = self.extractor.forward(&out).unwrap().0.deepest().tensor().clone();
        let rec = loss_rec(&out, &self.hr).unwrap().0.to_f64().unwrap();
        let per = loss_per(&phi, &self.phi_hr).unwrap().0.to_f64().unwrap();
        let tex = loss_texture(&phi, &self.sim, &self.m_t).unwrap().0.to_f64().unwrap();
        let adv = -self.critic.score(&out).unwrap().to_f64().unwrap();
        rec + w.alpha * per + w.beta * adv + w.lambda * tex
    }

    /// Analytic parameter gradient of [`ToyProblem::objective`].
    pub fn gradient(&self) -> Vec<Tensor<T>> {
        let w = &self.weights;
        let g = &self.generator;
        let (out, trace) = g.forward(&self.lr, &self.m_t).unwrap();
        let (_, mut grad) = loss_rec(&out, &self.hr).unwrap();
        let (pyr, ex_trace) = self.extractor.forward(&out).unwrap();
        let phi = pyr.deepest().tensor();
        let (_, mut g_phi) = loss_per(phi, &self.phi_hr).unwrap();
        g_phi.scale(T::from_f64_lossy(w.alpha));
        let (_, g_tex) = loss_texture(phi, &self.sim, &self.m_t).unwrap();
        g_phi.axpy(T::from_f64_lossy(w.lambda), &g_tex).unwrap();
        grad.add_assign(&self.extractor.backward_deepest(&ex_trace, &g_phi).unwrap()).unwrap();
        let (_, c_trace) = self.critic.forward(&out).unwrap();
        let (_, g_adv) = self.critic.backward(&c_trace, T::from_f64_lossy(-w.beta)).unwrap();
        grad.add_assign(&g_adv).unwrap();
        g.backward(&trace, &grad).unwrap().tensors
    }
}

/// Single-precision analytic generator gradient against central differences
/// of the same problem cast to double.
pub fn generator_check(seed: u64) -> Check {
    let toy = ToyProblem::new(seed);
    let analytic = toy.gradient();
    let toy64 = toy.to_f64();
    let fd = numeric_param_grads(&toy64.generator, |g| g.params_mut(), |g| toy64.objective(g));
    Check::new("generator parameters (single precision)", rel_error(&flatten(&analytic), &flatten(&fd)))
}
