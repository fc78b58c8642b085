#![allow(dead_code)]

use featvae::nn::gradcheck::{check_layer, compare, numeric_gradient, GradCheckReport};
use featvae::nn::{
    multitask_cross_entropy, Affine, BatchNorm, BatchNormConfig, Conv2d, Dropout, Flatten, L2Norm, MaxPool2d, Module,
    MultiTaskTargets, Relu, Sigmoid,
};
use featvae::vae::{elbo_backward, elbo_loss};
use featvae::{Rng, Tensor};

pub const H: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

pub fn normal(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
}

/// Normal entries pushed at least `gap` away from zero, so a kink at the
/// origin never falls inside a finite-difference stencil.
fn away_from_zero(shape: &[usize], gap: f64, rng: &mut Rng) -> Tensor<f64> {
    normal(shape, rng).map(|v| v + gap.copysign(v))
}

/// Entries whose pairwise gaps are at least 0.05, so max-pool winners are
/// stable under a perturbation of size `H`.
fn distinct(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let order = rng.permutation(n);
    Tensor::from_vec(shape, order.iter().map(|&i| i as f64 * 0.05 - 1.0).collect()).unwrap()
}

fn between(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

fn perturb_norm(bn: &mut BatchNorm<f64>, rng: &mut Rng) {
    for v in bn.gamma_mut().data_mut() {
        *v = 1.0 + 0.3 * rng.normal();
    }
    for v in bn.beta_mut().data_mut() {
        *v = 0.3 * rng.normal();
    }
}

/// One random configuration of the named layer kind: the layer and an input.
fn layer_case(kind: &str, rng: &mut Rng) -> (Box<dyn Module<f64>>, Tensor<f64>) {
    match kind {
        "affine" => {
            let (b, i, o) = (between(rng, 1, 5), between(rng, 1, 7), between(rng, 1, 7));
            let mut layer = Affine::<f64>::he(i, o, rng);
            for v in layer.params_mut()[1].value.data_mut() {
                *v = 0.1 * rng.normal();
            }
            (Box::new(layer), normal(&[b, i], rng))
        }
        "conv2d" => {
            let k = between(rng, 1, 3);
            let (ci, co, stride, pad) = (
                between(rng, 1, 3),
                between(rng, 1, 3),
                between(rng, 1, 2),
                between(rng, 0, 1),
            );
            // input extents that give a whole number of output positions
            let extent = |rng: &mut Rng| {
                let mut o = between(rng, 1, 3);
                while (o - 1) * stride + k <= 2 * pad {
                    o += 1;
                }
                (o - 1) * stride + k - 2 * pad
            };
            let (h, w) = (extent(rng), extent(rng));
            let layer = Conv2d::<f64>::he(ci, co, k, stride, pad, rng);
            (Box::new(layer), normal(&[between(rng, 1, 2), ci, h, w], rng))
        }
        "batchnorm1d" => {
            let mut layer = BatchNorm::<f64>::new_1d(between(rng, 1, 5), BatchNormConfig::default());
            perturb_norm(&mut layer, rng);
            let shape = [between(rng, 3, 7), layer.channels()];
            (Box::new(layer), normal(&shape, rng))
        }
        "batchnorm2d" => {
            let mut layer = BatchNorm::<f64>::new_2d(between(rng, 1, 3), BatchNormConfig::default());
            perturb_norm(&mut layer, rng);
            let shape = [
                between(rng, 2, 3),
                layer.channels(),
                between(rng, 1, 3),
                between(rng, 2, 3),
            ];
            (Box::new(layer), normal(&shape, rng))
        }
        "relu" => {
            let shape = [between(rng, 1, 4), between(rng, 1, 8)];
            (Box::new(Relu::<f64>::new()), away_from_zero(&shape, 1e-3, rng))
        }
        "sigmoid" => {
            let shape = [between(rng, 1, 4), between(rng, 1, 8)];
            (Box::new(Sigmoid::<f64>::new()), normal(&shape, rng).map(|v| 2.0 * v))
        }
        "dropout" => {
            let layer = Dropout::<f64>::new(rng.uniform(0.05, 0.7)).unwrap();
            let shape = [
                between(rng, 1, 4),
                between(rng, 1, 3),
                between(rng, 1, 3),
                between(rng, 1, 3),
            ];
            (Box::new(layer), normal(&shape, rng))
        }
        "l2norm" => {
            let shape = [between(rng, 1, 4), between(rng, 2, 9)];
            (Box::new(L2Norm::<f64>::new()), normal(&shape, rng))
        }
        "maxpool2d" => {
            let shape = [
                between(rng, 1, 2),
                between(rng, 1, 3),
                2 * between(rng, 1, 3),
                2 * between(rng, 1, 3),
            ];
            (Box::new(MaxPool2d::<f64>::new()), distinct(&shape, rng))
        }
        "flatten" => {
            let shape = [
                between(rng, 1, 3),
                between(rng, 1, 4),
                between(rng, 1, 3),
                between(rng, 1, 3),
            ];
            (Box::new(Flatten::new()), normal(&shape, rng))
        }
        other => panic!("unknown layer kind {other}"),
    }
}

pub const LAYER_KINDS: [&str; 10] = [
    "affine",
    "conv2d",
    "batchnorm1d",
    "batchnorm2d",
    "relu",
    "sigmoid",
    "dropout",
    "l2norm",
    "maxpool2d",
    "flatten",
];

pub fn check_layer_kind(kind: &str, configs: usize, seed: u64) -> GradCheckReport {
    let root = Rng::new(seed);
    let mut total = GradCheckReport::default();
    for c in 0..configs {
        let mut rng = root.fork(c as u64);
        let (mut layer, x) = layer_case(kind, &mut rng);
        let report = check_layer(layer.as_mut(), &x, rng.next_u64(), H).unwrap();
        total.merge(report);
    }
    total
}

pub fn check_elbo(configs: usize, seed: u64) -> GradCheckReport {
    let root = Rng::new(seed);
    let mut total = GradCheckReport::default();
    for c in 0..configs {
        let mut rng = root.fork(c as u64);
        let (b, d, latent) = (
            between(&mut rng, 1, 5),
            between(&mut rng, 1, 8),
            between(&mut rng, 1, 6),
        );
        let beta = rng.uniform(0.0, 2.0);
        let x = normal(&[b, d], &mut rng).map(|v| v.abs().min(1.0));
        let mu_hat = normal(&[b, d], &mut rng);
        let mu = normal(&[b, latent], &mut rng);
        let logvar = normal(&[b, latent], &mut rng);
        let g = elbo_backward(&x, &mu_hat, &mu, &logvar, beta).unwrap();
        let n = numeric_gradient(&mu_hat, H, |t| elbo_loss(&x, t, &mu, &logvar, beta).unwrap().total);
        total.merge(compare("mu_hat", &g.mu_hat, &n));
        let n = numeric_gradient(&mu, H, |t| elbo_loss(&x, &mu_hat, t, &logvar, beta).unwrap().total);
        total.merge(compare("mu", &g.mu, &n));
        let n = numeric_gradient(&logvar, H, |t| elbo_loss(&x, &mu_hat, &mu, t, beta).unwrap().total);
        total.merge(compare("logvar", &g.logvar, &n));
    }
    total
}

pub fn check_cross_entropy(configs: usize, seed: u64) -> GradCheckReport {
    let root = Rng::new(seed);
    let mut total = GradCheckReport::default();
    for c in 0..configs {
        let mut rng = root.fork(c as u64);
        let b = between(&mut rng, 1, 6);
        let cards: Vec<usize> = (0..between(&mut rng, 1, 4)).map(|_| between(&mut rng, 2, 6)).collect();
        let logits: Vec<Tensor<f64>> = cards.iter().map(|&k| normal(&[b, k], &mut rng)).collect();
        let labels = cards.iter().map(|&k| (0..b).map(|_| rng.below(k)).collect()).collect();
        let names = (0..cards.len()).map(|f| format!("f{f}")).collect();
        let targets = MultiTaskTargets::new(names, labels).unwrap();
        let (_, grads) = multitask_cross_entropy(&logits, &targets).unwrap();
        for f in 0..logits.len() {
            let n = numeric_gradient(&logits[f], H, |t| {
                let mut probe = logits.clone();
                probe[f] = t.clone();
                multitask_cross_entropy(&probe, &targets).unwrap().0
            });
            total.merge(compare(&format!("logits{f}"), &grads[f], &n));
        }
    }
    total
}

/// Every gradient check in the suite, by name.
pub fn gradcheck_suite(configs: usize, seed: u64) -> Vec<(String, GradCheckReport)> {
    let mut out: Vec<(String, GradCheckReport)> = LAYER_KINDS
        .iter()
        .enumerate()
        .map(|(i, k)| (k.to_string(), check_layer_kind(k, configs, seed + i as u64)))
        .collect();
    out.push(("elbo_loss".into(), check_elbo(configs, seed + 100)));
    out.push(("cross_entropy".into(), check_cross_entropy(configs, seed + 200)));
    out
}

/// Straight-line scalar RAdam with coupled weight decay, written from the
/// update equations.
pub fn radam_scalar_reference(
    x0: f64,
    grad: impl Fn(f64) -> f64,
    steps: usize,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    wd: f64,
) -> Vec<(f64, bool)> {
    let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
    let mut out = Vec::with_capacity(steps);
    for t in 1..=steps {
        let g = grad(x) + wd * x;
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g * g;
        let m_hat = m / (1.0 - beta1.powi(t as i32));
        let b2t = beta2.powi(t as i32);
        let rho = rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t);
        let rectified = rho > 4.0;
        if rectified {
            let v_hat = (v / (1.0 - b2t)).sqrt();
            let r = ((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)).sqrt();
            x -= lr * r * m_hat / (v_hat + eps);
        } else {
            x -= lr * m_hat;
        }
        out.push((x, rectified));
    }
    out
}
