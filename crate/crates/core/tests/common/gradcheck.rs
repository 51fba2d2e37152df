//! Finite-difference gradient checks shared by the test suites.

use forgeloc::loss::{bce_cls, bce_seg};
use forgeloc::{ArchId, ArchSpec, Graph, Model, Real, Result, RunningStats, Shape, Task, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{fd_gradient, rand_away_from_zero, rand_distinct, rand_tensor, rel_err};

pub const INSTANCES: u64 = 50;
pub const TOL: f64 = 1e-3;
pub const H: f64 = 1e-6;

type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

/// Reduce an op's output to a scalar with fixed random weights so every
/// output element contributes a distinct cotangent.
fn scalarize(g: &mut Graph<f64>, out: Var, weights: &Tensor<f64>) -> Var {
    if g.shape(out).is_scalar() {
        return out;
    }
    let w = g.input(weights.clone());
    let p = g.mul(out, w).unwrap();
    g.sum(p).unwrap()
}

/// Worst relative error over all inputs of one op instance.
fn check(inputs: &[Tensor<f64>], rng: &mut ChaCha8Rng, build: &Build) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input_with_grad(t.clone())).collect();
    let out = build(&mut g, &vars).unwrap();
    let weights = rand_tensor(rng, g.shape(out), -1.0, 1.0);
    let loss = scalarize(&mut g, out, &weights);
    let grads = g.backward(loss).unwrap();

    let eval = |xs: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars).unwrap();
        let l = scalarize(&mut g, out, &weights);
        g.value(l).data()[0]
    };
    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let numeric = fd_gradient(&inputs[i], H, |probe| {
            let mut xs = inputs.to_vec();
            xs[i] = probe.clone();
            eval(&xs)
        });
        worst = worst.max(rel_err(analytic.data(), numeric.data()));
    }
    worst
}

fn small_shape(rng: &mut ChaCha8Rng) -> Shape {
    Shape::new(rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(2..=5), rng.gen_range(2..=5))
}

fn rand_small(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let s = small_shape(rng);
    rand_tensor(rng, s, lo, hi)
}

/// One random instance of a primitive, returning its worst relative error.
pub type Case = fn(&mut ChaCha8Rng) -> f64;

/// Worst error over [`INSTANCES`] seeded instances, with the seed that
/// produced it.
pub fn worst_error(case: Case) -> (f64, u64) {
    (0..INSTANCES).map(|seed| (case(&mut ChaCha8Rng::seed_from_u64(seed)), seed)).fold((0.0, 0), |a, b| if b.0 > a.0 { b } else { a })
}

/// Every layer primitive and loss, by name.
pub const CASES: &[(&str, Case)] = &[
    ("conv2d", case_conv2d),
    ("maxpool2d", case_maxpool2d),
    ("global_avgpool", case_global_avgpool),
    ("batchnorm2d (train)", case_batchnorm2d_train),
    ("batchnorm2d (eval)", case_batchnorm2d_eval),
    ("relu", case_relu),
    ("sigmoid", case_sigmoid),
    ("upsample_nearest", case_upsample_nearest),
    ("resize_nearest", case_resize_nearest),
    ("concat_channels", case_concat_channels),
    ("add", case_add),
    ("mul", case_mul),
    ("sum", case_sum),
    ("mean", case_mean),
    ("bce_with_logits", case_bce_with_logits),
    ("bce_cls", case_bce_cls),
    ("bce_seg", case_bce_seg),
];

fn case_conv2d(rng: &mut ChaCha8Rng) -> f64 {
    let (cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let k = [1, 3, 5][rng.gen_range(0..3)];
    let stride = rng.gen_range(1..=2);
    let pad = rng.gen_range(0..=k / 2);
    let hw = rng.gen_range(k.max(3)..=7);
    let n = rng.gen_range(1..=2);
    let x = rand_tensor(rng, Shape::new(n, cin, hw, hw), -1.0, 1.0);
    let w = rand_tensor(rng, Shape::new(cout, cin, k, k), -1.0, 1.0);
    let b = rand_tensor(rng, Shape::new(1, cout, 1, 1), -1.0, 1.0);
    check(&[x, w, b], rng, &move |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, pad))
}

fn case_maxpool2d(rng: &mut ChaCha8Rng) -> f64 {
    let k = rng.gen_range(1..=3);
    let stride = rng.gen_range(1..=k);
    let s = Shape::new(rng.gen_range(1..=2), rng.gen_range(1..=2), rng.gen_range(k..=6), rng.gen_range(k..=6));
    let x = rand_distinct(rng, s, 0.01);
    check(&[x], rng, &move |g, v| g.maxpool2d(v[0], k, stride))
}

fn case_global_avgpool(rng: &mut ChaCha8Rng) -> f64 {
    let x = rand_small(rng, -2.0, 2.0);
    check(&[x], rng, &|g, v| g.global_avgpool(v[0]))
}

fn case_batchnorm2d_train(rng: &mut ChaCha8Rng) -> f64 {
    let s = Shape::new(rng.gen_range(2..=3), rng.gen_range(1..=3), rng.gen_range(2..=4), rng.gen_range(2..=4));
    let x = rand_tensor(rng, s, -2.0, 2.0);
    let gamma = rand_tensor(rng, Shape::new(1, s.c(), 1, 1), 0.5, 1.5);
    let beta = rand_tensor(rng, Shape::new(1, s.c(), 1, 1), -1.0, 1.0);
    check(&[x, gamma, beta], rng, &|g, v| g.batchnorm2d_train(v[0], v[1], v[2]).map(|(y, _)| y))
}

fn case_batchnorm2d_eval(rng: &mut ChaCha8Rng) -> f64 {
    let s = small_shape(rng);
    let x = rand_tensor(rng, s, -2.0, 2.0);
    let gamma = rand_tensor(rng, Shape::new(1, s.c(), 1, 1), 0.5, 1.5);
    let beta = rand_tensor(rng, Shape::new(1, s.c(), 1, 1), -1.0, 1.0);
    let stats = RunningStats {
        mean: (0..s.c()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        var: (0..s.c()).map(|_| rng.gen_range(0.5..2.0)).collect(),
    };
    check(&[x, gamma, beta], rng, &move |g, v| g.batchnorm2d_eval(v[0], v[1], v[2], &stats))
}

fn case_relu(rng: &mut ChaCha8Rng) -> f64 {
    let s = small_shape(rng);
    let x = rand_away_from_zero(rng, s, 0.01, 2.0);
    check(&[x], rng, &|g, v| g.relu(v[0]))
}

fn case_sigmoid(rng: &mut ChaCha8Rng) -> f64 {
    let x = rand_small(rng, -6.0, 6.0);
    check(&[x], rng, &|g, v| g.sigmoid(v[0]))
}

fn case_upsample_nearest(rng: &mut ChaCha8Rng) -> f64 {
    let f = rng.gen_range(1..=3);
    let x = rand_small(rng, -1.0, 1.0);
    check(&[x], rng, &move |g, v| g.upsample_nearest(v[0], f))
}

fn case_resize_nearest(rng: &mut ChaCha8Rng) -> f64 {
    let (h, w) = (rng.gen_range(1..=9), rng.gen_range(1..=9));
    let x = rand_small(rng, -1.0, 1.0);
    check(&[x], rng, &move |g, v| g.resize_nearest(v[0], h, w))
}

fn case_concat_channels(rng: &mut ChaCha8Rng) -> f64 {
    let s = small_shape(rng);
    let a = rand_tensor(rng, s, -1.0, 1.0);
    let cb = rng.gen_range(1..=3);
    let b = rand_tensor(rng, Shape::new(s.n(), cb, s.h(), s.w()), -1.0, 1.0);
    check(&[a, b], rng, &|g, v| g.concat_channels(v[0], v[1]))
}

fn case_add(rng: &mut ChaCha8Rng) -> f64 {
    let s = small_shape(rng);
    let (a, b) = (rand_tensor(rng, s, -1.0, 1.0), rand_tensor(rng, s, -1.0, 1.0));
    check(&[a, b], rng, &|g, v| g.add(v[0], v[1]))
}

fn case_mul(rng: &mut ChaCha8Rng) -> f64 {
    let s = small_shape(rng);
    let (a, b) = (rand_tensor(rng, s, -1.0, 1.0), rand_tensor(rng, s, -1.0, 1.0));
    check(&[a, b], rng, &|g, v| g.mul(v[0], v[1]))
}

fn case_sum(rng: &mut ChaCha8Rng) -> f64 {
    let x = rand_small(rng, -1.0, 1.0);
    check(&[x], rng, &|g, v| g.sum(v[0]))
}

fn case_mean(rng: &mut ChaCha8Rng) -> f64 {
    let x = rand_small(rng, -1.0, 1.0);
    check(&[x], rng, &|g, v| g.mean(v[0]))
}

fn case_bce_with_logits(rng: &mut ChaCha8Rng) -> f64 {
    let s = small_shape(rng);
    let z = rand_tensor(rng, s, -4.0, 4.0);
    let y: Vec<f64> = (0..s.numel()).map(|_| rng.gen_range(0..=1) as f64).collect();
    check(&[z], rng, &move |g, v| g.bce_with_logits(v[0], y.clone()))
}

fn case_bce_cls(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.gen_range(1..=6);
    let z = rand_tensor(rng, Shape::new(n, 1, 1, 1), -4.0, 4.0);
    let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=1)).collect();
    check(&[z], rng, &move |g, v| bce_cls(g, v[0], &labels).map(|l| l.loss))
}

fn case_bce_seg(rng: &mut ChaCha8Rng) -> f64 {
    let s = Shape::new(rng.gen_range(1..=2), 1, rng.gen_range(1..=5), rng.gen_range(1..=5));
    let z = rand_tensor(rng, s, -4.0, 4.0);
    let mask: Vec<u8> = (0..s.numel()).map(|_| rng.gen_range(0..=1)).collect();
    check(&[z], rng, &move |g, v| bce_seg(g, v[0], &mask).map(|l| l.loss))
}

/// Loss of a full FN3 segmentation forward pass in training mode.
fn fn3_loss<T: Real>(model: &mut Model<T>, x: &Tensor<T>, mask: &[u8]) -> (Graph<T>, Var) {
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let z = model.forward_seg_train(&mut g, xv).unwrap();
    let l = bce_seg(&mut g, z, mask).unwrap().loss;
    (g, l)
}

/// Finite-difference step for the whole-network check. At 1e-3 a few
/// pre-activations cross ReLU kinks and dominate the error.
pub const FN3_H: f64 = 1e-4;

/// Every FN3 parameter gradient against f64 finite differences.
pub fn fn3_param_errors<T: Real>() -> Vec<(String, f64)> {
    let spec = ArchSpec::new(ArchId::Fn3, Task::Seg).with_width(0.25);
    let base = Model::<f64>::build(spec, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_tensor(&mut rng, Shape::new(2, 3, 16, 16), -1.0, 1.0);
    let mask: Vec<u8> = (0..2 * 16 * 16).map(|i| u8::from((i / 16) % 16 < 7)).collect();

    let mut model_t = base.cast::<T>();
    let (g, l) = fn3_loss(&mut model_t, &x.cast(), &mask);
    g.backward_into(l, model_t.params_mut()).unwrap();

    let names: Vec<String> = base.params().iter().map(|p| p.name.clone()).collect();
    let mut pairs = Vec::new();
    for name in names {
        let value = base.params().by_name(&name).unwrap().value.clone();
        let numeric = fd_gradient(&value, FN3_H, |probe| {
            let mut m = base.clone();
            m.params_mut().by_name_mut(&name).unwrap().value = probe.clone();
            let (g, l) = fn3_loss(&mut m, &x, &mask);
            g.value(l).data()[0]
        });
        let analytic: Vec<f64> = model_t.params().by_name(&name).unwrap().grad.as_ref().unwrap().data().iter().map(|v| v.f64()).collect();
        pairs.push((name, analytic, numeric.into_vec()));
    }
    // Biases feeding batchnorm have an exactly zero gradient, so each
    // tensor's error is scaled by at least 1e-3 of the whole gradient norm.
    let total = pairs.iter().flat_map(|(_, _, n)| n.iter()).map(|v| v * v).sum::<f64>().sqrt();
    pairs
        .into_iter()
        .map(|(name, a, n)| {
            let diff = a.iter().zip(&n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let scale = norm(&a).max(norm(&n)).max(1e-3 * total);
            (name, diff / scale)
        })
        .collect()
}
