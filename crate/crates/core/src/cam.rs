//! Class activation maps and related visualizations.
//!
//! For a classifier `w` applied to feature maps `F`, the activation at
//! position (i, j) is `M_ij = Σ_k F_ijk · w_k (+ bias)`. Since every model
//! here applies its classifier before pooling, `M` is simply the dense
//! logit map and the image-level logit is its mean.

use image::{GrayImage, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{ArchId, Model};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::kernels::stable_sigmoid;
use crate::mask::{BinaryMask, MaskOrigin};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_TAU1: f64 = 0.5;

/// Raw (unnormalized) activation map of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub source_arch: ArchId,
    pub source_stride: usize,
}

impl ActivationMap {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Map a function over the raw values (e.g. an affine rescale).
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ActivationMap { values: self.values.iter().map(|&v| f(v)).collect(), ..self.clone() }
    }
}

/// Activation map scaled into [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// One activation map per image in `images`.
pub fn activation_map<T: Real>(model: &Model<T>, images: &Tensor<T>) -> Result<Vec<ActivationMap>> {
    let dense = model.predict_dense(images)?;
    let [n, _, h, w] = dense.shape().0;
    let stride = model.total_stride();
    Ok((0..n)
        .map(|i| ActivationMap {
            width: w,
            height: h,
            values: dense.plane(i, 0).iter().map(|v| v.f64()).collect(),
            source_arch: model.spec().arch,
            source_stride: stride,
        })
        .collect())
}

/// Min-max normalization; a constant map normalizes to all zeros.
pub fn normalize_map(m: &ActivationMap) -> NormalizedMap {
    let lo = m.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let values =
        if range > 0.0 && range.is_finite() { m.values.iter().map(|&v| (v - lo) / range).collect() } else { vec![0.0; m.values.len()] };
    NormalizedMap { width: m.width, height: m.height, values }
}

fn check_tau(tau: f64, name: &str) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::arg(format!("{name} must lie in (0, 1), got {tau}")));
    }
    Ok(())
}

/// `value >= tau1`, then nearest-upsampled to `width`×`height`.
pub fn binarize_map(map: &NormalizedMap, tau1: f64, width: usize, height: usize) -> Result<BinaryMask> {
    check_tau(tau1, "tau1")?;
    let small = BinaryMask::from_fn(map.width, map.height, MaskOrigin::Cam, |x, y| map.values[y * map.width + x] >= tau1);
    Ok(small.resize_nearest(width, height))
}

/// CAM-based masks at input resolution for every image.
pub fn cam_masks<T: Real>(model: &Model<T>, images: &Tensor<T>, tau1: f64) -> Result<Vec<BinaryMask>> {
    check_tau(tau1, "tau1")?;
    let s = images.shape();
    activation_map(model, images)?.iter().map(|m| binarize_map(&normalize_map(m), tau1, s.w(), s.h())).collect()
}

/// Masks from the per-pixel head: `sigmoid(logit) >= threshold` at input
/// resolution.
pub fn seg_predict<T: Real>(model: &Model<T>, images: &Tensor<T>, threshold: f64) -> Result<Vec<BinaryMask>> {
    let logits = model.predict_seg(images)?;
    Ok(masks_from_logits(&logits, threshold))
}

pub fn masks_from_logits<T: Real>(logits: &Tensor<T>, threshold: f64) -> Vec<BinaryMask> {
    let [n, _, h, w] = logits.shape().0;
    (0..n)
        .map(|i| {
            let plane = logits.plane(i, 0);
            BinaryMask::from_fn(w, h, MaskOrigin::SegHead, |x, y| stable_sigmoid(plane[y * w + x].f64()) >= threshold)
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub struct KernelViz {
    pub steps: usize,
    pub step_size: f64,
    pub size: usize,
    pub seed: u64,
}

impl Default for KernelViz {
    fn default() -> Self {
        KernelViz { steps: 128, step_size: 0.1, size: 64, seed: 0 }
    }
}

/// Gradient ascent on an input image to maximize the mean response of one
/// channel of a named layer. Starts from seeded uniform noise; each step
/// moves along the L2-normalized gradient (scaled by the input norm),
/// rescales the input back to its initial L2 norm, and clamps to the
/// normalized pixel range [-1, 1].
pub fn visualize_kernel<T: Real>(model: &Model<T>, layer: &str, channel: usize, opts: KernelViz) -> Result<Tensor<T>> {
    let idx = model.layer_index(layer).ok_or_else(|| Error::arg(format!("unknown layer {layer:?}")))?;
    let channels = model.layer_channels()[idx];
    if channel >= channels {
        return Err(Error::arg(format!("layer {layer:?} has {channels} channels, asked for channel {channel}")));
    }
    let c = model.spec().input_channels;
    let shape = Shape::new(1, c, opts.size, opts.size);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x = Tensor::from_fn(shape, |_| T::of(rng.gen_range(-0.1..0.1)));
    let norm = |t: &Tensor<T>| t.data().iter().map(|v| v.f64().powi(2)).sum::<f64>().sqrt();
    let target_norm = norm(&x);
    for _ in 0..opts.steps {
        let mut g = Graph::new();
        let xv = g.input_with_grad(x.clone());
        let out = model.layer_output(&mut g, xv, layer)?;
        let s = g.shape(out);
        let mut sel = Tensor::zeros(s);
        let w = T::of(1.0 / (s.n() * s.plane()) as f64);
        for n in 0..s.n() {
            for p in 0..s.plane() {
                sel.data_mut()[(n * s.c() + channel) * s.plane() + p] = w;
            }
        }
        let selv = g.input(sel);
        let prod = g.mul(out, selv)?;
        let objective = g.sum(prod)?;
        let grads = g.backward(objective)?;
        let grad = grads.get(xv).cloned().unwrap_or_else(|| Tensor::zeros(shape));
        let gn = norm(&grad);
        if gn == 0.0 {
            break;
        }
        let scale = T::of(opts.step_size * target_norm / gn);
        for (v, &d) in x.data_mut().iter_mut().zip(grad.data()) {
            *v += scale * d;
        }
        let xn = norm(&x);
        if xn > 0.0 {
            let r = T::of(target_norm / xn);
            for v in x.data_mut() {
                *v *= r;
            }
        }
        for v in x.data_mut() {
            *v = v.max(-T::one()).min(T::one());
        }
    }
    Ok(x)
}

/// Convert a normalized (mean 0.5, std 0.5) single image tensor to RGB.
pub fn tensor_to_rgb<T: Real>(t: &Tensor<T>) -> Result<RgbImage> {
    let [n, c, h, w] = t.shape().0;
    if n != 1 || c != 3 {
        return Err(Error::dim(format!("expected a (1, 3, H, W) image tensor, got {}", t.shape())));
    }
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |ch: usize| {
            let v = t.at([0, ch, y as usize, x as usize]).f64() * 0.5 + 0.5;
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        };
        image::Rgb([px(0), px(1), px(2)])
    }))
}

fn upsampled_value(map: &NormalizedMap, x: u32, y: u32, width: u32, height: u32) -> f64 {
    let sx = x as usize * map.width / width as usize;
    let sy = y as usize * map.height / height as usize;
    map.values[sy * map.width + sx]
}

/// 8-bit grayscale rendering of a normalized map at the given size.
pub fn heatmap_gray(map: &NormalizedMap, width: u32, height: u32) -> GrayImage {
    GrayImage::from_fn(width, height, |x, y| image::Luma([(upsampled_value(map, x, y, width, height) * 255.0).round() as u8]))
}

/// Blue → cyan → yellow → red ramp.
pub fn colormap(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let r = (1.5 - (4.0 * v - 3.0).abs()).clamp(0.0, 1.0);
    let g = (1.5 - (4.0 * v - 2.0).abs()).clamp(0.0, 1.0);
    let b = (1.5 - (4.0 * v - 1.0).abs()).clamp(0.0, 1.0);
    [(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8]
}

/// Color-mapped heatmap blended 0.5/0.5 over the input image.
pub fn heatmap_overlay(image: &RgbImage, map: &NormalizedMap) -> RgbImage {
    let (w, h) = image.dimensions();
    RgbImage::from_fn(w, h, |x, y| {
        let c = colormap(upsampled_value(map, x, y, w, h));
        let p = image.get_pixel(x, y).0;
        image::Rgb([0, 1, 2].map(|i| (p[i] as u16 + c[i] as u16).div_ceil(2) as u8))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn amap(w: usize, h: usize, values: Vec<f64>) -> ActivationMap {
        ActivationMap { width: w, height: h, values, source_arch: ArchId::Fn3, source_stride: 1 }
    }

    #[test]
    fn normalize_min_max() {
        let n = normalize_map(&amap(2, 2, vec![1.0, 3.0, 2.0, 4.0]));
        let expect = [0.0, 2.0 / 3.0, 1.0 / 3.0, 1.0];
        for (a, b) in n.values.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(normalize_map(&amap(2, 2, vec![5.0; 4])).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn binarize_closed_threshold() {
        let n = NormalizedMap { width: 2, height: 2, values: vec![0.0, 0.667, 0.333, 1.0] };
        assert_eq!(binarize_map(&n, 0.5, 2, 2).unwrap().data(), &[0, 1, 0, 1]);
        assert_eq!(binarize_map(&n, 1e-9, 2, 2).unwrap().data(), &[0, 1, 1, 1]);
        let exact = NormalizedMap { width: 1, height: 1, values: vec![0.5] };
        assert_eq!(binarize_map(&exact, 0.5, 1, 1).unwrap().data(), &[1]);
        assert!(matches!(binarize_map(&n, 1.0, 2, 2), Err(Error::Argument(_))));
        assert!(matches!(binarize_map(&n, 0.0, 2, 2), Err(Error::Argument(_))));
    }

    #[test]
    fn binarize_upsamples_to_input() {
        let n = NormalizedMap { width: 2, height: 1, values: vec![1.0, 0.0] };
        let m = binarize_map(&n, 0.5, 4, 2).unwrap();
        assert_eq!(m.data(), &[1, 1, 0, 0, 1, 1, 0, 0]);
        assert_eq!(m.origin, MaskOrigin::Cam);
    }

    #[test]
    fn seg_threshold_ties_are_foreground() {
        let zeros = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2));
        assert_eq!(masks_from_logits(&zeros, 0.5)[0].data(), &[1, 1, 1, 1]);
        let signs = Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![20.0, -20.0, -20.0, 20.0]).unwrap();
        assert_eq!(masks_from_logits(&signs, 0.5)[0].data(), &[1, 0, 0, 1]);
    }

    /// The per-pixel head thresholds absolute probabilities while CAM
    /// thresholds a min-max normalized map; on an all-positive bimodal map
    /// they disagree.
    #[test]
    fn seg_head_and_cam_binarization_differ() {
        // every logit > 0 → all foreground for the seg head; normalized map
        // splits the two modes
        let vals = vec![2.0, 2.1, 8.0, 8.2];
        let logits = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), vals.clone()).unwrap();
        let seg = &masks_from_logits(&logits, 0.5)[0];
        let cam = binarize_map(&normalize_map(&amap(2, 2, vals)), 0.5, 2, 2).unwrap();
        assert_eq!(seg.data(), &[1, 1, 1, 1]);
        assert_eq!(cam.data(), &[0, 0, 1, 1]);
        assert_ne!(seg.data(), cam.data());
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), [0, 0, 127]);
        assert_eq!(colormap(1.0), [127, 0, 0]);
    }
}
