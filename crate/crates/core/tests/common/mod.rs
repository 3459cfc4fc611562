//! Independent reference computations shared by the integration tests and the
//! acceptance target. Nothing here calls back into the code it checks except
//! to obtain the value under test.
#![allow(dead_code)]

use std::path::Path;

use ecgtune::bo::{self, expected_improvement, BoConfig};
use ecgtune::gp::{GpConfig, GpModel, Kernel};
use ecgtune::metrics::{harmonic_f1, ConfusionMatrix};
use ecgtune::model::{LayerSpec, ModelSpec};
use ecgtune::nn::layers::{
    conv1d_backward, conv1d_forward, dense_backward, dense_forward, dropout, dropout_backward,
    maxpool1d, maxpool1d_backward, relu, relu_backward, residual_add,
};
use ecgtune::nn::loss::softmax_crossentropy;
use ecgtune::nn::{Conv1d, Dense, FeatureMap, Mode, Network, Padding};
use ecgtune::nn::network::ForwardCache;
use ecgtune::pso::{self, PsoConfig};
use ecgtune::space::{HyperParams, SearchSpace};
use ecgtune::trial::Evaluation;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

// ------------------------------------------------------------ gradients

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, 1e-6)`, worst entry. The floor keeps exact zeros
/// (dropped units, non-max pool inputs) from dividing by nothing.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    max_rel_err_floor(analytic, numeric, 1e-6)
}

pub fn max_rel_err_floor(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// A central difference of `loss` is quantised to about ulp(loss)/(2h); for
/// a whole network that is ~1e-10 per unit of loss, so entries far below the
/// floor are compared absolutely.
pub fn loss_floor(loss: f64) -> f64 {
    1e-5 * loss.abs().max(1.0)
}

/// Central differences of a scalar function over every entry of `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + FD_STEP;
            let up = f(&p);
            p[i] = orig - FD_STEP;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn randn(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn fmap(b: usize, l: usize, c: usize, v: Vec<f64>) -> FeatureMap {
    FeatureMap::new(b, l, c, v).unwrap()
}

#[derive(Debug, Clone)]
pub struct GradCase {
    pub layer: &'static str,
    pub shape: String,
    pub max_rel_err: f64,
}

fn conv_case(rng: &mut ChaCha8Rng) -> GradCase {
    let (b, l, cin, cout) = (rng.random_range(1..=3), rng.random_range(3..=9), rng.random_range(1..=4), rng.random_range(1..=4));
    let k = [1, 3, 5][rng.random_range(0..3)];
    let x = randn(b * l * cin, rng);
    let mut conv = Conv1d::zeros(k, cin, cout);
    conv.weight = randn(conv.weight.len(), rng);
    conv.bias = randn(cout, rng);
    let r = randn(b * l * cout, rng);
    let loss = |x: &[f64], w: &[f64], bias: &[f64]| {
        let c = Conv1d { weight: w.to_vec(), bias: bias.to_vec(), ..conv.clone() };
        dot(conv1d_forward(&fmap(b, l, cin, x.to_vec()), &c, Padding::Same).unwrap().values(), &r)
    };
    let g = conv1d_backward(&fmap(b, l, cin, x.clone()), &conv, &fmap(b, l, cout, r.clone())).unwrap();
    let ex = max_rel_err(g.input.values(), &numeric_grad(&x, |p| loss(p, &conv.weight, &conv.bias)));
    let ew = max_rel_err(&g.weight, &numeric_grad(&conv.weight, |p| loss(&x, p, &conv.bias)));
    let eb = max_rel_err(&g.bias, &numeric_grad(&conv.bias, |p| loss(&x, &conv.weight, p)));
    GradCase { layer: "conv1d", shape: format!("b{b} l{l} {cin}->{cout} k{k}"), max_rel_err: ex.max(ew).max(eb) }
}

fn dense_case(rng: &mut ChaCha8Rng) -> GradCase {
    let (b, l, c, out) = (rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=3), rng.random_range(1..=5));
    let inp = l * c;
    let x = randn(b * inp, rng);
    let mut d = Dense::zeros(inp, out);
    d.weight = randn(d.weight.len(), rng);
    d.bias = randn(out, rng);
    let r = randn(b * out, rng);
    let loss = |x: &[f64], w: &[f64], bias: &[f64]| {
        let dd = Dense { weight: w.to_vec(), bias: bias.to_vec(), ..d.clone() };
        dot(dense_forward(&fmap(b, l, c, x.to_vec()), &dd).unwrap().values(), &r)
    };
    let g = dense_backward(&fmap(b, l, c, x.clone()), &d, &fmap(b, 1, out, r.clone())).unwrap();
    let ex = max_rel_err(g.input.values(), &numeric_grad(&x, |p| loss(p, &d.weight, &d.bias)));
    let ew = max_rel_err(&g.weight, &numeric_grad(&d.weight, |p| loss(&x, p, &d.bias)));
    let eb = max_rel_err(&g.bias, &numeric_grad(&d.bias, |p| loss(&x, &d.weight, p)));
    GradCase { layer: "dense", shape: format!("b{b} {l}x{c} -> {out}"), max_rel_err: ex.max(ew).max(eb) }
}

fn pool_case(rng: &mut ChaCha8Rng) -> GradCase {
    let (b, l, c) = (rng.random_range(1..=3), rng.random_range(2..=9), rng.random_range(1..=3));
    // distinct values 0.01 apart: no ties for the perturbation to flip
    let mut x: Vec<f64> = (0..b * l * c).map(|i| i as f64 * 0.01 - 0.3).collect();
    x.shuffle(rng);
    let (y, route) = maxpool1d(&fmap(b, l, c, x.clone()), 2).unwrap();
    let r = randn(y.values().len(), rng);
    let g = maxpool1d_backward(&fmap(b, l, c, x.clone()), &route, &fmap(b, l / 2, c, r.clone())).unwrap();
    let num = numeric_grad(&x, |p| dot(maxpool1d(&fmap(b, l, c, p.to_vec()), 2).unwrap().0.values(), &r));
    GradCase { layer: "maxpool1d", shape: format!("b{b} l{l} c{c}"), max_rel_err: max_rel_err(g.values(), &num) }
}

fn relu_case(rng: &mut ChaCha8Rng) -> GradCase {
    let (b, l, c) = (rng.random_range(1..=3), rng.random_range(1..=9), rng.random_range(1..=4));
    // keep inputs away from the kink
    let x: Vec<f64> = randn(b * l * c, rng)
        .into_iter()
        .map(|v| if v.abs() < 0.01 { 0.5 } else { v })
        .collect();
    let r = randn(x.len(), rng);
    let g = relu_backward(&fmap(b, l, c, x.clone()), &fmap(b, l, c, r.clone())).unwrap();
    let num = numeric_grad(&x, |p| dot(relu(&fmap(b, l, c, p.to_vec())).values(), &r));
    GradCase { layer: "relu", shape: format!("b{b} l{l} c{c}"), max_rel_err: max_rel_err(g.values(), &num) }
}

fn dropout_case(rng: &mut ChaCha8Rng) -> GradCase {
    let (b, l, c) = (rng.random_range(1..=3), rng.random_range(1..=9), rng.random_range(1..=4));
    let rate = rng.random_range(0.05..0.6);
    let mask_seed: u64 = rng.random();
    let x = randn(b * l * c, rng);
    let r = randn(x.len(), rng);
    let forward = |p: &[f64]| {
        let mut mrng = ChaCha8Rng::seed_from_u64(mask_seed);
        dropout(&fmap(b, l, c, p.to_vec()), rate, Mode::Train, &mut mrng).unwrap()
    };
    let (_, mask) = forward(&x);
    let g = dropout_backward(mask.as_ref(), &fmap(b, l, c, r.clone())).unwrap();
    let num = numeric_grad(&x, |p| dot(forward(p).0.values(), &r));
    GradCase { layer: "dropout", shape: format!("b{b} l{l} c{c} p{rate:.2}"), max_rel_err: max_rel_err(g.values(), &num) }
}

fn residual_case(rng: &mut ChaCha8Rng) -> GradCase {
    let (b, l, c) = (rng.random_range(1..=3), rng.random_range(1..=9), rng.random_range(1..=4));
    let s = randn(b * l * c, rng);
    let y = randn(b * l * c, rng);
    let r = randn(s.len(), rng);
    let f = |s: &[f64], y: &[f64]| dot(residual_add(&fmap(b, l, c, s.to_vec()), &fmap(b, l, c, y.to_vec())).unwrap().values(), &r);
    // analytic: identity on both branches
    let es = max_rel_err(&r, &numeric_grad(&s, |p| f(p, &y)));
    let ey = max_rel_err(&r, &numeric_grad(&y, |p| f(&s, p)));
    GradCase { layer: "residual_add", shape: format!("b{b} l{l} c{c}"), max_rel_err: es.max(ey) }
}

fn softmax_ce_case(rng: &mut ChaCha8Rng) -> GradCase {
    let (b, k) = (rng.random_range(1..=4), rng.random_range(2..=6));
    let z: Vec<f64> = randn(b * k, rng).into_iter().map(|v| 3.0 * v).collect();
    let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
    let (_, g) = softmax_crossentropy(&fmap(b, 1, k, z.clone()), &labels).unwrap();
    let num = numeric_grad(&z, |p| softmax_crossentropy(&fmap(b, 1, k, p.to_vec()), &labels).unwrap().0);
    GradCase { layer: "softmax_crossentropy", shape: format!("b{b} k{k}"), max_rel_err: max_rel_err(g.values(), &num) }
}

/// A small network with a residual shortcut (projected or identity) checked
/// end to end: softmax cross-entropy loss, every parameter.
fn network_case(rng: &mut ChaCha8Rng, projected: bool) -> GradCase {
    let len = 2 * rng.random_range(2..=5);
    let c1 = rng.random_range(1..=3);
    let c2 = if projected { c1 + rng.random_range(1..=2) } else { c1 };
    let classes = 3;
    let layers = vec![
        LayerSpec::Conv1d { kernel_size: 3, in_channels: 1, out_channels: c1 },
        LayerSpec::Relu,
        LayerSpec::Conv1d { kernel_size: 3, in_channels: c1, out_channels: c2 },
        LayerSpec::Relu,
        LayerSpec::ResidualAdd { shortcut_from: 2, projection: projected.then_some((c1, c2)) },
        LayerSpec::MaxPool1d { pool_size: 2 },
        LayerSpec::Dropout { rate: 0.2 },
        LayerSpec::Dense { in_features: len / 2 * c2, out_features: 4 },
        LayerSpec::Relu,
        LayerSpec::Dense { in_features: 4, out_features: classes },
        LayerSpec::Softmax,
    ];
    let spec = ModelSpec { layers, input_length: len, input_channels: 1, class_count: classes, residual_block_index: 4 };
    let b = rng.random_range(1..=3);
    let drop_seed: u64 = rng.random();
    let forward = |n: &Network, x: &[f64]| {
        let mut drng = ChaCha8Rng::seed_from_u64(drop_seed);
        n.forward(fmap(b, len, 1, x.to_vec()), Mode::Train, &mut drng).unwrap()
    };
    // Central differences are meaningless across a relu or max-pool kink, so
    // redraw until every relu input and pool pair is clear of one.
    let (net, x) = loop {
        let mut net = Network::init(&spec, rng.random()).unwrap();
        for p in net.parameters_mut() {
            for v in p.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v = 0.7 * z;
            }
        }
        let x = randn(b * len, rng);
        if kink_margin(&net, &forward(&net, &x)) > KINK_MARGIN {
            break (net, x);
        }
    };
    let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..classes)).collect();
    let loss_of = |n: &Network| -> (f64, Vec<Vec<f64>>) {
        let cache = forward(n, &x);
        let (loss, g) = softmax_crossentropy(cache.logits(), &labels).unwrap();
        (loss, n.backward(&cache, &g).unwrap())
    };
    let (base_loss, analytic) = loss_of(&net);
    let floor = loss_floor(base_loss);
    let mut worst: f64 = 0.0;
    for (t, grad) in analytic.iter().enumerate() {
        let base = net.parameters()[t].clone();
        let num = numeric_grad(&base, |p| {
            let mut n2 = net.clone();
            n2.parameters_mut()[t].copy_from_slice(p);
            loss_of(&n2).0
        });
        worst = worst.max(max_rel_err_floor(grad, &num, floor));
    }
    GradCase {
        layer: if projected { "network(residual, 1x1 projection)" } else { "network(residual, identity)" },
        shape: format!("b{b} l{len} c{c1}->{c2}"),
        max_rel_err: worst,
    }
}

const KINK_MARGIN: f64 = 1e-3;

/// Smallest distance of any relu input from zero, or of any max-pool pair
/// from a tie.
fn kink_margin(net: &Network, cache: &ForwardCache) -> f64 {
    let mut margin = f64::INFINITY;
    for (i, layer) in net.spec.layers.iter().enumerate() {
        let x = &cache.activations[i];
        match layer {
            LayerSpec::Relu => {
                margin = x.values().iter().fold(margin, |m, v| m.min(v.abs()));
            }
            LayerSpec::MaxPool1d { pool_size } => {
                let (bs, l, c) = x.shape();
                for bi in 0..bs {
                    for w in 0..l / pool_size {
                        for ch in 0..c {
                            for a in 0..*pool_size {
                                for z in a + 1..*pool_size {
                                    let d = x.get(bi, w * pool_size + a, ch) - x.get(bi, w * pool_size + z, ch);
                                    margin = margin.min(d.abs());
                                }
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }
    margin
}

/// `shapes` randomized cases for every layer type plus both residual networks.
pub fn gradient_cases(shapes: usize, seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..shapes {
        out.push(conv_case(&mut rng));
        out.push(dense_case(&mut rng));
        out.push(pool_case(&mut rng));
        out.push(relu_case(&mut rng));
        out.push(dropout_case(&mut rng));
        out.push(residual_case(&mut rng));
        out.push(softmax_ce_case(&mut rng));
        out.push(network_case(&mut rng, true));
        out.push(network_case(&mut rng, false));
    }
    out
}

// ------------------------------------------------------------------- GP

/// Matérn 5/2 written out independently of the library.
fn matern52(a: &[f64], b: &[f64], var: f64, ls: &[f64]) -> f64 {
    let r = a.iter().zip(b).zip(ls).map(|((x, y), l)| ((x - y) / l).powi(2)).sum::<f64>().sqrt();
    let s = 5f64.sqrt() * r;
    var * (1.0 + s + s * s / 3.0) * (-s).exp()
}

#[derive(Debug, Clone, Copy)]
pub struct GpOracleGap {
    pub mean: f64,
    pub variance: f64,
    pub lml: f64,
}

/// Compares the Cholesky-based GP against an explicit inverse and
/// determinant for `n` random points in 5-D.
pub fn gp_oracle_gap(n: usize, seed: u64) -> GpOracleGap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 5;
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random()).collect()).collect();
    let y: Vec<f64> = x.iter().map(|p| 3.0 * (4.0 * p[0]).sin() + p[1] * p[2] + 5.0 + 0.1 * rng.random::<f64>()).collect();
    let ls: Vec<f64> = (0..dim).map(|_| rng.random_range(0.3..1.0)).collect();
    let kernel = Kernel { signal_variance: 1.3, lengthscales: ls.clone(), noise_variance: 1e-3 };
    let gp = GpModel::with_kernel(x.clone(), &y, kernel, &GpConfig::default()).unwrap();

    let (mu, sd) = {
        let m = y.iter().sum::<f64>() / n as f64;
        let s = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        (m, s)
    };
    let ys = DVector::from_iterator(n, y.iter().map(|v| (v - mu) / sd));
    let k = DMatrix::from_fn(n, n, |i, j| {
        matern52(&x[i], &x[j], 1.3, &ls) + if i == j { 1e-3 + gp.jitter() } else { 0.0 }
    });
    let kinv = k.clone().try_inverse().expect("invertible");
    let alpha = &kinv * &ys;
    let lml = -0.5 * ys.dot(&alpha) - 0.5 * k.determinant().ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    let mut gap = GpOracleGap { mean: 0.0, variance: 0.0, lml: (lml - gp.log_marginal_likelihood()).abs() };
    for _ in 0..25 {
        let q: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
        let ks = DVector::from_iterator(n, x.iter().map(|p| matern52(&q, p, 1.3, &ls)));
        let mean = mu + sd * ks.dot(&alpha);
        let var = (sd * sd * (1.3 - (ks.transpose() * &kinv * &ks)[(0, 0)])).max(0.0);
        let (m, v) = gp.posterior(&q).unwrap();
        gap.mean = gap.mean.max((m - mean).abs());
        gap.variance = gap.variance.max((v - var).abs());
    }
    gap
}

// ------------------------------------------------------------------- EI

/// Monte-Carlo E[max(best - f, 0)], f ~ N(mean, var), with antithetic pairs.
pub fn ei_monte_carlo(mean: f64, var: f64, best: f64, samples: usize, rng: &mut impl Rng) -> f64 {
    let sd = var.sqrt();
    let mut acc = 0.0;
    for _ in 0..samples / 2 {
        let z: f64 = StandardNormal.sample(rng);
        acc += (best - (mean + sd * z)).max(0.0) + (best - (mean - sd * z)).max(0.0);
    }
    acc / (2 * (samples / 2)) as f64
}

/// Worst |closed form - MC| over `triples` random (mean, sigma, best).
pub fn ei_mc_gap(triples: usize, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..triples)
        .map(|_| {
            let mean = rng.random_range(-2.0..2.0);
            let sd: f64 = rng.random_range(0.01..1.5);
            let best = rng.random_range(-2.0..2.0);
            let mc = ei_monte_carlo(mean, sd * sd, best, samples, &mut rng);
            (expected_improvement(mean, sd * sd, best) - mc).abs()
        })
        .fold(0.0, f64::max)
}

/// Smallest EI over random triples, including extreme ones.
pub fn ei_min(triples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..triples)
        .map(|_| {
            let mean = rng.random_range(-1e3..1e3);
            let var = 10f64.powf(rng.random_range(-30.0..6.0));
            let best = rng.random_range(-1e3..1e3);
            expected_improvement(mean, var, best)
        })
        .fold(f64::INFINITY, f64::min)
}

// ------------------------------------------------------------ optimisers

/// Known optimum of the synthetic quadratic, in native units.
pub const QUADRATIC_OPTIMUM: HyperParams = HyperParams {
    drop_rate: 0.03,
    dense_layers: 4,
    conv_layers: 2,
    learning_rate: 0.01,
    adam_decay: 3e-6,
};

/// Shifted quadratic on the encoded default space: `|u(h) - u(h*)|^2`.
pub fn quadratic(space: &SearchSpace, h: &HyperParams) -> f64 {
    let u = space.encode(h).unwrap();
    let c = space.encode(&QUADRATIC_OPTIMUM).unwrap();
    u.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum()
}

#[derive(Debug, Clone, Copy)]
pub struct BoRun {
    pub design_best: f64,
    pub final_best: f64,
}

pub fn bo_on_quadratic(seed: u64) -> BoRun {
    let space = SearchSpace::default();
    let config = BoConfig { seed, ..BoConfig::default() };
    let mut f = |h: &HyperParams, _s: u64| Ok(Evaluation::objective(quadratic(&space, h)));
    let r = bo::optimise(&mut f, &space, &config, None, Vec::new(), &mut |_| Ok(())).unwrap();
    let design_best = r.log[..config.initial_design_size].iter().map(|t| t.objective).fold(f64::INFINITY, f64::min);
    BoRun { design_best, final_best: r.best.objective }
}

pub fn random_search_on_quadratic(seed: u64, budget: usize) -> f64 {
    let space = SearchSpace::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..budget)
        .map(|_| {
            let u: Vec<f64> = (0..space.dim()).map(|_| rng.random()).collect();
            quadratic(&space, &space.decode(&u).unwrap())
        })
        .fold(f64::INFINITY, f64::min)
}

/// `sum (u_i - 0.5)^2` on the unit cube.
pub fn sphere(u: &[f64]) -> f64 {
    u.iter().map(|v| (v - 0.5).powi(2)).sum()
}

pub fn pso_on_sphere(seed: u64) -> f64 {
    let config = PsoConfig { particles: 10, iterations: 50, seed, ..PsoConfig::default() };
    pso::minimize(&mut |u| sphere(u), 5, &config).unwrap().1
}

// -------------------------------------------------------------- metrics

pub fn random_confusion(rng: &mut impl Rng) -> ConfusionMatrix {
    let k = rng.random_range(2..=8);
    let counts = (0..k)
        .map(|_| (0..k).map(|_| if rng.random_bool(0.2) { 0 } else { rng.random_range(0..60) }).collect())
        .collect();
    ConfusionMatrix { counts, class_names: (0..k).map(|i| format!("c{i}")).collect() }
}

/// Worst |F1 - 2PR/(P+R)| over every class of `n` random matrices.
pub fn f1_identity_gap(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let cm = random_confusion(&mut rng);
        for c in 0..cm.class_count() {
            let s = cm.precision_recall_f1(c);
            if s.precision.value + s.recall.value > 0.0 {
                worst = worst.max((s.f1.value - harmonic_f1(s.precision.value, s.recall.value)).abs());
            }
        }
    }
    worst
}

// ------------------------------------------------------------------ misc

pub fn write_config(path: &Path, json: &serde_json::Value) {
    std::fs::write(path, serde_json::to_string_pretty(json).unwrap()).unwrap();
}
