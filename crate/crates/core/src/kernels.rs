//! Forward and backward kernels for the layer primitives.
//!
//! These are plain functions over [`Tensor`]s; the tape in [`crate::graph`]
//! wires them together. Convolution goes through im2col + GEMM.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

pub fn conv_out_dim(input: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || input + 2 * padding < k {
        return None;
    }
    Some((input + 2 * padding - k) / stride + 1)
}

fn conv_shapes(x: Shape, w: Shape, stride: usize, padding: usize) -> Result<(usize, usize, usize, usize)> {
    let [_, c_in, h, wd] = x.0;
    let [c_out, w_in, kh, kw] = w.0;
    if w_in != c_in {
        return Err(Error::dim(format!("conv2d: input channels {c_in} (axis 1 of {x}) != weight in-channels {w_in} (axis 1 of {w})")));
    }
    if kh != kw {
        return Err(Error::dim(format!("conv2d: non-square kernel {kh}x{kw}")));
    }
    if stride == 0 {
        return Err(Error::arg("conv2d: stride must be >= 1"));
    }
    let ho = conv_out_dim(h, kh, stride, padding)
        .ok_or_else(|| Error::dim(format!("conv2d: kernel {kh} larger than padded height {} (axis 2 of {x})", h + 2 * padding)))?;
    let wo = conv_out_dim(wd, kw, stride, padding)
        .ok_or_else(|| Error::dim(format!("conv2d: kernel {kw} larger than padded width {} (axis 3 of {x})", wd + 2 * padding)))?;
    Ok((c_out, kh, ho, wo))
}

struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Unfold one sample (C×H×W) into a (C·k·k)×(Ho·Wo) row-major matrix.
    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let (k, s, p) = (self.k, self.stride, self.pad);
        let out_plane = self.ho * self.wo;
        for c in 0..self.c_in {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * out_plane..(row + 1) * out_plane];
                    for oy in 0..self.ho {
                        let iy = (oy * s + ky) as isize - p as isize;
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p as isize;
                            *v = if ix < 0 || ix >= self.w as isize { T::zero() } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`]: scatter-add columns back into a sample gradient.
    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let (k, s, p) = (self.k, self.stride, self.pad);
        let out_plane = self.ho * self.wo;
        for c in 0..self.c_in {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * out_plane..(row + 1) * out_plane];
                    for oy in 0..self.ho {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let line = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix >= 0 && ix < self.w as isize {
                                line[ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn geom(x: Shape, w: Shape, stride: usize, pad: usize) -> Result<(ConvGeom, usize)> {
    let (c_out, k, ho, wo) = conv_shapes(x, w, stride, pad)?;
    Ok((ConvGeom { c_in: x.c(), h: x.h(), w: x.w(), k, stride, pad, ho, wo }, c_out))
}

pub fn conv2d<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>, stride: usize, padding: usize) -> Result<Tensor<T>> {
    let (g, c_out) = geom(x.shape(), weight.shape(), stride, padding)?;
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::dim(format!("conv2d: bias has {} entries, expected {c_out}", b.len())));
        }
    }
    let n = x.shape().n();
    let ckk = g.c_in * g.k * g.k;
    let out_plane = g.ho * g.wo;
    let mut out = Tensor::zeros(Shape::new(n, c_out, g.ho, g.wo));
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); ckk * out_plane] };
    for i in 0..n {
        let xs = x.sample(i);
        let b_mat: &[T] = if g.is_pointwise() {
            xs
        } else {
            g.im2col(xs, &mut cols);
            &cols
        };
        let dst = &mut out.data_mut()[i * c_out * out_plane..(i + 1) * c_out * out_plane];
        if let Some(b) = bias {
            for (co, chunk) in dst.chunks_mut(out_plane).enumerate() {
                chunk.fill(b.data()[co]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(
            c_out,
            ckk,
            out_plane,
            T::one(),
            weight.data(),
            ckk as isize,
            1,
            b_mat,
            out_plane as isize,
            1,
            beta,
            dst,
            out_plane as isize,
            1,
        );
    }
    Ok(out)
}

pub struct ConvGrads<T: Real> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, stride: usize, padding: usize, dy: &Tensor<T>) -> Result<ConvGrads<T>> {
    let (g, c_out) = geom(x.shape(), weight.shape(), stride, padding)?;
    let n = x.shape().n();
    let ckk = g.c_in * g.k * g.k;
    let out_plane = g.ho * g.wo;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(Shape::new(1, c_out, 1, 1));
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { ckk * out_plane }];
    let mut dcols = vec![T::zero(); ckk * out_plane];
    let sample_len = g.c_in * g.h * g.w;
    for i in 0..n {
        let dys = dy.sample(i);
        for (co, chunk) in dys.chunks(out_plane).enumerate() {
            db.data_mut()[co] += chunk.iter().copied().sum::<T>();
        }
        let xs = x.sample(i);
        let b_mat: &[T] = if g.is_pointwise() {
            xs
        } else {
            g.im2col(xs, &mut cols);
            &cols
        };
        // dW += dY · colsᵀ
        T::gemm(
            c_out,
            out_plane,
            ckk,
            T::one(),
            dys,
            out_plane as isize,
            1,
            b_mat,
            1,
            out_plane as isize,
            T::one(),
            dw.data_mut(),
            ckk as isize,
            1,
        );
        // dcols = Wᵀ · dY
        T::gemm(
            ckk,
            c_out,
            out_plane,
            T::one(),
            weight.data(),
            1,
            ckk as isize,
            dys,
            out_plane as isize,
            1,
            T::zero(),
            &mut dcols,
            out_plane as isize,
            1,
        );
        let dxs = &mut dx.data_mut()[i * sample_len..(i + 1) * sample_len];
        if g.is_pointwise() {
            dxs.copy_from_slice(&dcols);
        } else {
            g.col2im(&dcols, dxs);
        }
    }
    Ok(ConvGrads { input: dx, weight: dw, bias: db })
}

/// Returns the pooled tensor and, per output cell, the flat input index of
/// its maximum (first occurrence in row-major window order).
pub fn maxpool2d<T: Real>(x: &Tensor<T>, k: usize, stride: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = x.shape().0;
    if k == 0 || stride == 0 {
        return Err(Error::arg("maxpool2d: window and stride must be >= 1"));
    }
    if h < k || w < k {
        return Err(Error::dim(format!("maxpool2d: window {k} larger than input {h}x{w} (axes 2, 3 of {})", x.shape())));
    }
    let ho = (h - k) / stride + 1;
    let wo = (w - k) / stride + 1;
    let mut out = Tensor::zeros(Shape::new(n, c, ho, wo));
    let mut arg = Vec::with_capacity(out.len());
    let src = x.data();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * stride * w + ox * stride;
                let mut best_v = src[best];
                for ky in 0..k {
                    for kx in 0..k {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        if src[idx] > best_v {
                            best_v = src[idx];
                            best = idx;
                        }
                    }
                }
                out.data_mut()[o] = best_v;
                arg.push(best);
                o += 1;
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool2d_backward<T: Real>(input_shape: Shape, argmax: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        dx.data_mut()[i] += g;
    }
    dx
}

pub fn global_avgpool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape().0;
    if h == 0 || w == 0 {
        return Err(Error::dim(format!("global_avgpool: empty spatial extent {}", x.shape())));
    }
    let denom = T::of((h * w) as f64);
    let mut out = Tensor::zeros(Shape::new(n, c, 1, 1));
    for i in 0..n {
        for ch in 0..c {
            out.data_mut()[i * c + ch] = x.plane(i, ch).iter().copied().sum::<T>() / denom;
        }
    }
    Ok(out)
}

pub fn global_avgpool_backward<T: Real>(input_shape: Shape, dy: &Tensor<T>) -> Tensor<T> {
    let p = input_shape.plane();
    let scale = T::one() / T::of(p as f64);
    let mut dx = Tensor::zeros(input_shape);
    for (plane, &g) in dx.data_mut().chunks_mut(p).zip(dy.data()) {
        plane.fill(g * scale);
    }
    dx
}

/// Per-channel batch statistics produced in training mode.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance, as used for normalization.
    pub var: Vec<f64>,
    /// Number of values per channel.
    pub count: usize,
}

pub struct BnForward<T: Real> {
    pub output: Tensor<T>,
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub stats: Option<BatchStats>,
}

fn check_affine<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    let c = x.shape().c();
    if gamma.len() != c || beta.len() != c {
        return Err(Error::dim(format!(
            "batchnorm2d: input has {c} channels (axis 1 of {}), gamma/beta have {}/{}",
            x.shape(),
            gamma.len(),
            beta.len()
        )));
    }
    Ok(())
}

/// Training mode: normalize with per-channel batch statistics.
pub fn batchnorm2d_train<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<BnForward<T>> {
    check_affine(x, gamma, beta)?;
    let [n, c, h, w] = x.shape().0;
    let count = n * h * w;
    if count == 0 {
        return Err(Error::dim("batchnorm2d: empty batch"));
    }
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for ch in 0..c {
        let mut s = 0.0;
        for i in 0..n {
            s += x.plane(i, ch).iter().map(|v| v.f64()).sum::<f64>();
        }
        let m = s / count as f64;
        let mut sq = 0.0;
        for i in 0..n {
            sq += x.plane(i, ch).iter().map(|v| (v.f64() - m).powi(2)).sum::<f64>();
        }
        mean[ch] = m;
        var[ch] = sq / count as f64;
    }
    let inv_std: Vec<T> = var.iter().map(|v| T::of(1.0 / (v + BN_EPS).sqrt())).collect();
    let means: Vec<T> = mean.iter().map(|&m| T::of(m)).collect();
    let (xhat, output) = normalize(x, gamma, beta, &means, &inv_std);
    Ok(BnForward { output, xhat, inv_std, stats: Some(BatchStats { mean, var, count }) })
}

/// Evaluation mode: normalize with the supplied running statistics.
pub fn batchnorm2d_eval<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &[T],
    running_var: &[T],
) -> Result<BnForward<T>> {
    check_affine(x, gamma, beta)?;
    let c = x.shape().c();
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::dim(format!("batchnorm2d: running stats have {} entries, input has {c} channels", running_mean.len())));
    }
    let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + T::of(BN_EPS)).sqrt()).collect();
    let (xhat, output) = normalize(x, gamma, beta, running_mean, &inv_std);
    Ok(BnForward { output, xhat, inv_std, stats: None })
}

fn normalize<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, mean: &[T], inv_std: &[T]) -> (Tensor<T>, Tensor<T>) {
    let [n, c, _, _] = x.shape().0;
    let p = x.shape().plane();
    let mut xhat = Tensor::zeros(x.shape());
    let mut out = Tensor::zeros(x.shape());
    for i in 0..n {
        for ch in 0..c {
            let start = (i * c + ch) * p;
            let (g, b, m, s) = (gamma.data()[ch], beta.data()[ch], mean[ch], inv_std[ch]);
            for j in start..start + p {
                let xh = (x.data()[j] - m) * s;
                xhat.data_mut()[j] = xh;
                out.data_mut()[j] = g * xh + b;
            }
        }
    }
    (xhat, out)
}

pub struct BnGrads<T: Real> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

#[allow(clippy::needless_range_loop)]
pub fn batchnorm2d_backward<T: Real>(fwd_xhat: &Tensor<T>, inv_std: &[T], gamma: &Tensor<T>, training: bool, dy: &Tensor<T>) -> BnGrads<T> {
    let [n, c, _, _] = dy.shape().0;
    let p = dy.shape().plane();
    let m = T::of((n * p) as f64);
    let mut dgamma = Tensor::zeros(Shape::new(1, c, 1, 1));
    let mut dbeta = Tensor::zeros(Shape::new(1, c, 1, 1));
    let mut dx = Tensor::zeros(dy.shape());
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for i in 0..n {
            let start = (i * c + ch) * p;
            for j in start..start + p {
                sum_dy += dy.data()[j];
                sum_dy_xhat += dy.data()[j] * fwd_xhat.data()[j];
            }
        }
        dgamma.data_mut()[ch] = sum_dy_xhat;
        dbeta.data_mut()[ch] = sum_dy;
        let g = gamma.data()[ch];
        let s = inv_std[ch];
        for i in 0..n {
            let start = (i * c + ch) * p;
            for j in start..start + p {
                let dxhat = dy.data()[j] * g;
                dx.data_mut()[j] =
                    if training { s / m * (m * dxhat - g * sum_dy - fwd_xhat.data()[j] * g * sum_dy_xhat) } else { dxhat * s };
            }
        }
    }
    BnGrads { input: dx, gamma: dgamma, beta: dbeta }
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

/// Logistic function without overflow for large |x|.
#[inline]
pub fn stable_sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(stable_sigmoid)
}

pub fn sigmoid_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, &s) in dx.data_mut().iter_mut().zip(y.data()) {
        *d *= s * (T::one() - s);
    }
    dx
}

/// Source row/column for each output row/column of a nearest resize.
fn nearest_index(out: usize, input: usize) -> Vec<usize> {
    (0..out).map(|i| i * input / out).collect()
}

/// Nearest-neighbour resize to an arbitrary (h, w).
pub fn resize_nearest<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape().0;
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::dim(format!("resize_nearest: cannot resize {} to {out_h}x{out_w}", x.shape())));
    }
    let ry = nearest_index(out_h, h);
    let rx = nearest_index(out_w, w);
    let mut out = Tensor::zeros(Shape::new(n, c, out_h, out_w));
    let mut o = 0;
    for i in 0..n {
        for ch in 0..c {
            let src = x.plane(i, ch);
            for &sy in &ry {
                for &sx in &rx {
                    out.data_mut()[o] = src[sy * w + sx];
                    o += 1;
                }
            }
        }
    }
    Ok(out)
}

pub fn resize_nearest_backward<T: Real>(input_shape: Shape, dy: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = input_shape.0;
    let [_, _, oh, ow] = dy.shape().0;
    let ry = nearest_index(oh, h);
    let rx = nearest_index(ow, w);
    let mut dx = Tensor::zeros(input_shape);
    let mut o = 0;
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * h * w;
            for &sy in &ry {
                for &sx in &rx {
                    dx.data_mut()[base + sy * w + sx] += dy.data()[o];
                    o += 1;
                }
            }
        }
    }
    dx
}

pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [na, ca, ha, wa] = a.shape().0;
    let [nb, cb, hb, wb] = b.shape().0;
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(Error::dim(format!("concat_channels: {} and {} differ outside the channel axis", a.shape(), b.shape())));
    }
    let p = ha * wa;
    let mut data = Vec::with_capacity((ca + cb) * p * na);
    for i in 0..na {
        data.extend_from_slice(a.sample(i));
        data.extend_from_slice(b.sample(i));
    }
    Tensor::from_vec(Shape::new(na, ca + cb, ha, wa), data)
}

pub fn split_channels<T: Real>(dy: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = dy.shape().0;
    let cb = c - ca;
    let p = h * w;
    let mut da = Vec::with_capacity(n * ca * p);
    let mut db = Vec::with_capacity(n * cb * p);
    for i in 0..n {
        let s = dy.sample(i);
        da.extend_from_slice(&s[..ca * p]);
        db.extend_from_slice(&s[ca * p..]);
    }
    (
        Tensor::from_vec(Shape::new(n, ca, h, w), da).expect("split sizes"),
        Tensor::from_vec(Shape::new(n, cb, h, w), db).expect("split sizes"),
    )
}

/// Mean binary cross-entropy on logits, computed as
/// `max(z, 0) - z·y + ln(1 + e^{-|z|})` per element.
pub fn bce_with_logits<T: Real>(logits: &[T], targets: &[T]) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| {
            let (z, y) = (z.f64(), y.f64());
            z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
        })
        .sum();
    total / logits.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn conv_of_ones_sums_window() {
        let x = Tensor::<f32>::full(Shape::new(1, 1, 3, 3), 1.0);
        let w = Tensor::<f32>::full(Shape::new(1, 1, 3, 3), 1.0);
        let b = Tensor::<f32>::zeros(Shape::new(1, 1, 1, 1));
        let y = conv2d(&x, &w, Some(&b), 1, 0).unwrap();
        assert_eq!(y.shape(), Shape::scalar());
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn pointwise_identity_kernel() {
        let x = Tensor::<f32>::from_fn(Shape::new(2, 1, 4, 5), |[n, _, h, w]| (n * 20 + h * 5 + w) as f32 - 7.5);
        let w = Tensor::<f32>::full(Shape::new(1, 1, 1, 1), 1.0);
        let y = conv2d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_output_arithmetic() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 64, 64));
        let w = Tensor::<f32>::zeros(Shape::new(8, 3, 7, 7));
        assert_eq!(conv2d(&x, &w, None, 2, 3).unwrap().shape(), Shape::new(1, 8, 32, 32));
        assert_eq!(conv_out_dim(17, 7, 2, 3), Some(9));
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 8, 8));
        let w = Tensor::<f32>::zeros(Shape::new(4, 3, 3, 3));
        let err = conv2d(&x, &w, None, 1, 1).unwrap_err();
        assert!(matches!(err, Error::Dimension(ref m) if m.contains("axis 1")), "{err}");
        let tiny = Tensor::<f32>::zeros(Shape::new(1, 3, 2, 2));
        assert!(matches!(conv2d(&tiny, &w, None, 1, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn maxpool_picks_max_and_first_tie() {
        let x = t(Shape::new(1, 1, 2, 2), &[1.0, 2.0, 3.0, 4.0]);
        let (y, arg) = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);

        let c = Tensor::<f64>::full(Shape::new(1, 1, 4, 4), 0.5);
        let (y, arg) = maxpool2d(&c, 2, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
        let dx = maxpool2d_backward(c.shape(), &arg, &Tensor::full(y.shape(), 1.0));
        let expect = [1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(dx.data(), &expect);
    }

    #[test]
    fn maxpool_window_too_large() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 1, 3));
        assert!(matches!(maxpool2d(&x, 2, 2), Err(Error::Dimension(_))));
    }

    #[test]
    fn avgpool_mean_and_constant() {
        let x = t(Shape::new(1, 1, 2, 2), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(global_avgpool(&x).unwrap().data(), &[2.5]);
        let c = Tensor::<f64>::full(Shape::new(2, 3, 5, 7), -1.25);
        assert!(global_avgpool(&c).unwrap().data().iter().all(|&v| v == -1.25));
    }

    #[test]
    fn batchnorm_gamma_zero_gives_beta() {
        let x = Tensor::<f64>::from_fn(Shape::new(2, 2, 3, 3), |[n, c, h, w]| (n + 2 * c + h * w) as f64);
        let gamma = Tensor::zeros(Shape::new(1, 2, 1, 1));
        let beta = t(Shape::new(1, 2, 1, 1), &[0.3, -0.7]);
        let y = batchnorm2d_train(&x, &gamma, &beta).unwrap().output;
        for n in 0..2 {
            assert!(y.plane(n, 0).iter().all(|&v| v == 0.3));
            assert!(y.plane(n, 1).iter().all(|&v| v == -0.7));
        }
    }

    #[test]
    fn batchnorm_channel_mismatch() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 2, 2));
        let g = Tensor::<f32>::zeros(Shape::new(1, 2, 1, 1));
        assert!(matches!(batchnorm2d_train(&x, &g, &g), Err(Error::Dimension(_))));
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let x = t(Shape::new(1, 1, 1, 2), &[-1.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 2.0]);
        assert_eq!(stable_sigmoid(0.0f32), 0.5);
        for v in [100.0f32, -100.0] {
            let s = stable_sigmoid(v);
            assert!(s.is_finite() && (0.0..=1.0).contains(&s));
        }
        // high-precision reference: 1/(1+e^-100) = 1 - 3.72e-44; e^-100/(1+e^-100) = 3.72e-44
        let lo = stable_sigmoid(-100.0f64);
        assert!(lo > 0.0 && (lo - 3.720075976020836e-44).abs() < 1e-56);
        assert!(stable_sigmoid(100.0f64) < 1.0 + 1e-15);
    }

    #[test]
    fn upsample_replicates() {
        let x = t(Shape::scalar(), &[5.0]);
        let y = resize_nearest(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[5.0; 4]);
        let z = Tensor::<f64>::from_fn(Shape::new(1, 2, 3, 3), |[_, c, h, w]| (c * 9 + h * 3 + w) as f64);
        assert_eq!(resize_nearest(&z, 3, 3).unwrap(), z);
    }

    #[test]
    fn concat_shapes_and_split() {
        let a = Tensor::<f32>::full(Shape::new(1, 2, 4, 4), 1.0);
        let b = Tensor::<f32>::full(Shape::new(1, 3, 4, 4), 2.0);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), Shape::new(1, 5, 4, 4));
        let (ra, rb) = split_channels(&c, 2);
        assert_eq!((ra, rb), (a.clone(), b));
        let empty = Tensor::<f32>::zeros(Shape::new(1, 0, 4, 4));
        assert_eq!(concat_channels(&a, &empty).unwrap(), a);
        let off = Tensor::<f32>::zeros(Shape::new(1, 1, 4, 5));
        assert!(matches!(concat_channels(&a, &off), Err(Error::Dimension(_))));
    }
}
