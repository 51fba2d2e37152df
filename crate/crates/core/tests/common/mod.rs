//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the kernels it is compared against.

#![allow(dead_code)]

pub mod gradcheck;

use forgeloc::data::{synth_benchmark, Method, Sample};
use forgeloc::{ArchId, ArchSpec, BinaryMask, MaskOrigin, Model, Shape, Task, Tensor};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Uniform values in ±[min_abs, max_abs], keeping clear of ReLU's kink.
pub fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: Shape, min_abs: f64, max_abs: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(min_abs..max_abs);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Distinct values at least `gap` apart, randomly arranged.
pub fn rand_distinct(rng: &mut ChaCha8Rng, shape: Shape, gap: f64) -> Tensor<f64> {
    let n = shape.numel();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * gap).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        vals.swap(i, j);
    }
    let shift = rng.gen_range(-1.0..1.0);
    Tensor::from_vec(shape, vals.into_iter().map(|v| v + shift).collect()).unwrap()
}

/// Six nested loops over output position and kernel taps.
pub fn naive_conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&[f64]>, stride: usize, pad: usize) -> Tensor<f64> {
    let [n, cin, h, wd] = x.shape().0;
    let [cout, _, k, _] = w.shape().0;
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(Shape::new(n, cout, oh, ow));
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b[co]);
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.at([ni, ci, iy as usize, ix as usize]) * w.at([co, ci, ky, kx]);
                                }
                            }
                        }
                    }
                    out.set([ni, co, oy, ox], acc);
                }
            }
        }
    }
    out
}

/// Window maxima plus the (y, x) of the first maximum in row-major order.
pub fn naive_maxpool(x: &Tensor<f64>, k: usize, stride: usize) -> (Tensor<f64>, Vec<(usize, usize)>) {
    let [n, c, h, w] = x.shape().0;
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut out = Tensor::zeros(Shape::new(n, c, oh, ow));
    let mut pos = Vec::new();
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (f64::NEG_INFINITY, 0, 0);
                    for ky in 0..k {
                        for kx in 0..k {
                            let (y, xx) = (oy * stride + ky, ox * stride + kx);
                            let v = x.at([ni, ci, y, xx]);
                            if v > best.0 {
                                best = (v, y, xx);
                            }
                        }
                    }
                    out.set([ni, ci, oy, ox], best.0);
                    pos.push((best.1, best.2));
                }
            }
        }
    }
    (out, pos)
}

/// IoU by building the index sets explicitly.
pub fn set_iou(pred: &[u8], gt: &[u8], value: u8) -> Option<f64> {
    use std::collections::BTreeSet;
    let p: BTreeSet<usize> = (0..pred.len()).filter(|&i| pred[i] == value).collect();
    let g: BTreeSet<usize> = (0..gt.len()).filter(|&i| gt[i] == value).collect();
    let union = p.union(&g).count();
    (union > 0).then(|| p.intersection(&g).count() as f64 / union as f64)
}

/// Per-sample BCE written as the textbook two-branch formula.
pub fn bce_oracle(z: f64, y: u8) -> f64 {
    let softplus = |t: f64| if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
    if y == 1 {
        softplus(-z)
    } else {
        softplus(z)
    }
}

/// Central finite differences of a scalar function, one coordinate at a time.
pub fn fd_gradient(x: &Tensor<f64>, h: f64, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut g = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        g.data_mut()[i] = (up - down) / (2.0 * h);
    }
    g
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Flattened pristine + tampered samples from the synthetic generator.
pub fn synth_samples(pairs: usize, size: u32, seed: u64) -> Vec<Sample> {
    synth_benchmark(pairs, size, seed, None).unwrap().into_iter().flat_map(|p| [p.pristine, p.tampered]).collect()
}

/// Real images are uniformly dark; fakes carry a bright rectangle covering
/// more than half (but not all) of the frame, and their mask is exactly that rectangle.
pub fn bright_dark_samples(pairs: usize, size: u32, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * pairs);
    for i in 0..pairs {
        let dark = Rgb([rng.gen_range(0..40), rng.gen_range(0..40), rng.gen_range(0..40)]);
        out.push(Sample {
            id: format!("bd{i:04}_real"),
            image: RgbImage::from_pixel(size, size, dark),
            label: 0,
            mask: None,
            method: Method::Pristine,
        });
        let side = rng.gen_range((size * 3 / 4)..size);
        let (x0, y0) = (rng.gen_range(0..=size - side), rng.gen_range(0..=size - side));
        let inside = move |x: u32, y: u32| x >= x0 && x < x0 + side && y >= y0 && y < y0 + side;
        let image = RgbImage::from_fn(size, size, |x, y| if inside(x, y) { Rgb([255, 230 + (x % 20) as u8, 240]) } else { dark });
        let mask = BinaryMask::from_fn(size as usize, size as usize, MaskOrigin::GroundTruth, |x, y| inside(x as u32, y as u32));
        out.push(Sample { id: format!("bd{i:04}_fake"), image, label: 1, mask: Some(mask), method: Method::Synth });
    }
    out
}

/// VGG3 wired to pass the red channel straight through: after the two
/// ReLUs a bright pixel gives about 1 and a dark one 0, and the classifier
/// subtracts 0.5. It segments [`bright_dark_samples`] perfectly.
pub fn oracle_model(task: Task) -> Model<f32> {
    let mut m: Model<f32> = Model::build(ArchSpec::new(ArchId::Vgg3, task).with_width(0.25), 0).unwrap();
    for p in m.params_mut().iter_mut() {
        p.value = Tensor::zeros(p.value.shape());
    }
    let set = |m: &mut Model<f32>, name: &str, idx: [usize; 4], v: f32| {
        m.params_mut().by_name_mut(name).unwrap().value.set(idx, v);
    };
    set(&mut m, "conv1.weight", [0, 0, 1, 1], 1.0);
    set(&mut m, "conv2.weight", [0, 0, 1, 1], 1.0);
    set(&mut m, "classifier.weight", [0, 0, 0, 0], 1.0);
    set(&mut m, "classifier.bias", [0, 0, 0, 0], -0.5);
    m
}
