//! Synthetic stand-in for face-manipulation data.
//!
//! Pristine images are smooth face-like compositions carrying per-pixel
//! sensor noise. Tampering replaces a large region with content that lacks
//! that noise (a smoothed donor, or a smoothed local warp of the source),
//! leaving a local texture inconsistency for a detector to find. The
//! returned mask lists exactly the pixels whose value changed.

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::preprocess::compute_mask;
use super::sample::{Method, Sample, Split};
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, MaskOrigin};

const SENSOR_NOISE_STD: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TamperMode {
    #[serde(rename = "ELLIPSE_PASTE")]
    EllipsePaste,
    #[serde(rename = "BLEND_PASTE")]
    BlendPaste,
    #[serde(rename = "WARP_PATCH")]
    WarpPatch,
}

impl TamperMode {
    pub const ALL: [TamperMode; 3] = [TamperMode::EllipsePaste, TamperMode::BlendPaste, TamperMode::WarpPatch];

    pub fn as_str(self) -> &'static str {
        match self {
            TamperMode::EllipsePaste => "ELLIPSE_PASTE",
            TamperMode::BlendPaste => "BLEND_PASTE",
            TamperMode::WarpPatch => "WARP_PATCH",
        }
    }
}

impl fmt::Display for TamperMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TamperMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        TamperMode::ALL.into_iter().find(|m| m.as_str() == norm).ok_or_else(|| Error::arg(format!("unknown tamper mode {s:?}")))
    }
}

/// Region replaced by a tamper operation, in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Region {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Rect { x: u32, y: u32, w: u32, h: u32 },
}

impl Region {
    pub fn is_empty(&self) -> bool {
        match *self {
            Region::Ellipse { rx, ry, .. } => rx <= 0.0 || ry <= 0.0,
            Region::Rect { w, h, .. } => w == 0 || h == 0,
        }
    }

    /// Blend weight of the donor at pixel (x, y). Inside the region it is
    /// 1; with `feather > 0` it ramps linearly to 0 over `feather` pixels
    /// outside the boundary.
    pub fn alpha(&self, x: u32, y: u32, feather: f64) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let outside = match *self {
            Region::Ellipse { cx, cy, rx, ry } => {
                let (dx, dy) = ((x as f64 + 0.5 - cx) / rx, (y as f64 + 0.5 - cy) / ry);
                let rho = (dx * dx + dy * dy).sqrt();
                (rho - 1.0) * rx.min(ry)
            }
            Region::Rect { x: rx0, y: ry0, w, h } => {
                let dx = if x < rx0 { (rx0 - x) as f64 } else { (x + 1).saturating_sub(rx0 + w) as f64 };
                let dy = if y < ry0 { (ry0 - y) as f64 } else { (y + 1).saturating_sub(ry0 + h) as f64 };
                if dx == 0.0 && dy == 0.0 {
                    -1.0
                } else {
                    dx.max(dy)
                }
            }
        };
        if outside <= 0.0 {
            1.0
        } else if feather > 0.0 && outside < feather {
            1.0 - outside / feather
        } else {
            0.0
        }
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Smooth face-like image with sensor noise.
pub fn synth_pristine<R: Rng>(size: u32, rng: &mut R) -> RgbImage {
    let s = size as f64;
    let bg0: [f64; 3] = [0, 1, 2].map(|_| rng.gen_range(30.0..200.0));
    let bg1: [f64; 3] = [0, 1, 2].map(|_| rng.gen_range(30.0..200.0));
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let ripple_f = rng.gen_range(1.0..3.0) * std::f64::consts::TAU / s;
    let ripple_a = rng.gen_range(0.0..15.0);

    let r = rng.gen_range(150.0..235.0);
    let skin = [r, r * rng.gen_range(0.6..0.85), r * rng.gen_range(0.45..0.75)];
    let (fcx, fcy) = (s * rng.gen_range(0.4..0.6), s * rng.gen_range(0.4..0.6));
    let (frx, fry) = (s * rng.gen_range(0.22..0.32), s * rng.gen_range(0.28..0.38));
    let eye_dx = frx * rng.gen_range(0.35..0.5);
    let eye_y = fcy - fry * rng.gen_range(0.15..0.35);
    let eye_r = (s * 0.04).max(1.0);
    let mouth_y = fcy + fry * rng.gen_range(0.35..0.55);
    let noise = Normal::new(0.0, SENSOR_NOISE_STD).expect("valid std");

    RgbImage::from_fn(size, size, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let t = (((px - s / 2.0) * ca + (py - s / 2.0) * sa) / s + 0.5).clamp(0.0, 1.0);
        let ripple = ripple_a * (px * ripple_f * ca - py * ripple_f * sa).sin();
        let mut c = [0, 1, 2].map(|i| lerp(bg0[i], bg1[i], t) + ripple);
        let (dx, dy) = ((px - fcx) / frx, (py - fcy) / fry);
        let rho2 = dx * dx + dy * dy;
        if rho2 <= 1.0 {
            let shade = 1.0 - 0.3 * rho2;
            c = [0, 1, 2].map(|i| skin[i] * shade);
            let eye = |ex: f64| ((px - ex).powi(2) + (py - eye_y).powi(2)).sqrt() < eye_r;
            if eye(fcx - eye_dx) || eye(fcx + eye_dx) {
                c = [40.0, 30.0, 30.0];
            } else if (py - mouth_y).abs() < eye_r * 0.6 && (px - fcx).abs() < frx * 0.4 {
                c = [150.0, 50.0, 60.0];
            }
        }
        image::Rgb(c.map(|v| (v + noise.sample(rng)).round().clamp(0.0, 255.0) as u8))
    })
}

/// 3×3 box filter (edges clamp); removes most of the sensor noise.
fn smooth(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    RgbImage::from_fn(w, h, |x, y| {
        let mut acc = [0u32; 3];
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let sx = (x as i64 + dx).clamp(0, w as i64 - 1) as u32;
                let sy = (y as i64 + dy).clamp(0, h as i64 - 1) as u32;
                let p = img.get_pixel(sx, sy).0;
                for c in 0..3 {
                    acc[c] += p[c] as u32;
                }
            }
        }
        image::Rgb(acc.map(|v| ((v + 4) / 9) as u8))
    })
}

/// Smooth sinusoidal displacement resampled bilinearly.
fn warp<R: Rng>(img: &RgbImage, rng: &mut R) -> RgbImage {
    let (w, h) = img.dimensions();
    let amp = rng.gen_range(1.0..2.5);
    let freq = rng.gen_range(0.05..0.15);
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    RgbImage::from_fn(w, h, |x, y| {
        let sx = (x as f64 + amp * (y as f64 * freq + phase).sin()).clamp(0.0, (w - 1) as f64);
        let sy = (y as f64 + amp * (x as f64 * freq + phase).cos()).clamp(0.0, (h - 1) as f64);
        let (x0, y0) = (sx.floor() as u32, sy.floor() as u32);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
        let p = |xx, yy| img.get_pixel(xx, yy).0;
        let (a, b, c, d) = (p(x0, y0), p(x1, y0), p(x0, y1), p(x1, y1));
        image::Rgb([0, 1, 2].map(|i| {
            let top = lerp(a[i] as f64, b[i] as f64, fx);
            let bot = lerp(c[i] as f64, d[i] as f64, fx);
            lerp(top, bot, fy).round().clamp(0.0, 255.0) as u8
        }))
    })
}

/// Composite `donor` over `source` inside `region` (optionally feathered)
/// and return the result with its ground-truth mask. Every pixel with a
/// positive blend weight is guaranteed to differ from the source, so the
/// mask is exactly the blend support.
pub fn paste_region(source: &RgbImage, donor: &RgbImage, region: Region, feather: f64) -> Result<(RgbImage, BinaryMask)> {
    if source.dimensions() != donor.dimensions() {
        return Err(Error::dim(format!("source {:?} vs donor {:?}", source.dimensions(), donor.dimensions())));
    }
    let (w, h) = source.dimensions();
    let out = RgbImage::from_fn(w, h, |x, y| {
        let s = source.get_pixel(x, y).0;
        let a = region.alpha(x, y, feather);
        if a <= 0.0 {
            return image::Rgb(s);
        }
        let d = donor.get_pixel(x, y).0;
        let mut p = [0, 1, 2].map(|i| lerp(s[i] as f64, d[i] as f64, a).round() as u8);
        if p == s {
            p[0] = if s[0] == 255 { 254 } else { s[0] + 1 };
        }
        image::Rgb(p)
    });
    let mask = compute_mask(&out, source, 0)?;
    Ok((out, mask))
}

fn random_region<R: Rng>(mode: TamperMode, size: u32, rng: &mut R) -> Region {
    let s = size as f64;
    match mode {
        TamperMode::EllipsePaste | TamperMode::BlendPaste => Region::Ellipse {
            cx: s * rng.gen_range(0.46..0.54),
            cy: s * rng.gen_range(0.46..0.54),
            rx: s * rng.gen_range(0.44..0.52),
            ry: s * rng.gen_range(0.44..0.52),
        },
        TamperMode::WarpPatch => {
            let w = (s * rng.gen_range(0.75..0.95)).round() as u32;
            let h = (s * rng.gen_range(0.75..0.95)).round() as u32;
            Region::Rect { x: rng.gen_range(0..=size - w.min(size)), y: rng.gen_range(0..=size - h.min(size)), w, h }
        }
    }
}

/// Tamper `source` with content from `donor` inside an explicit region.
/// An empty region yields an untouched, label-0 sample.
pub fn synth_tamper_in<R: Rng>(source: &RgbImage, donor: &RgbImage, region: Region, mode: TamperMode, rng: &mut R) -> Result<Sample> {
    if source.dimensions() != donor.dimensions() {
        return Err(Error::dim(format!("source {:?} vs donor {:?}", source.dimensions(), donor.dimensions())));
    }
    let (w, h) = source.dimensions();
    if region.is_empty() {
        return Ok(Sample {
            id: String::new(),
            image: source.clone(),
            label: 0,
            mask: Some(BinaryMask::zeros(w as usize, h as usize, MaskOrigin::GroundTruth)),
            method: Method::Pristine,
        });
    }
    let (content, feather) = match mode {
        TamperMode::EllipsePaste => (smooth(donor), 0.0),
        TamperMode::BlendPaste => (smooth(donor), rng.gen_range(2.0..5.0)),
        TamperMode::WarpPatch => (smooth(&warp(source, rng)), 0.0),
    };
    let (image, mask) = paste_region(source, &content, region, feather)?;
    let label = u8::from(mask.foreground() > 0);
    Ok(Sample { id: String::new(), image, label, mask: Some(mask), method: if label == 1 { Method::Synth } else { Method::Pristine } })
}

/// Tamper `source` with a random region drawn for `mode`.
pub fn synth_tamper<R: Rng>(source: &RgbImage, donor: &RgbImage, rng: &mut R, mode: TamperMode) -> Result<Sample> {
    let region = random_region(mode, source.width().min(source.height()), rng);
    synth_tamper_in(source, donor, region, mode, rng)
}

/// A pristine image and its tampered counterpart, assigned to one split.
#[derive(Clone, Debug)]
pub struct SynthPair {
    pub pristine: Sample,
    pub tampered: Sample,
    pub mode: TamperMode,
    pub split: Split,
}

/// `count` seeded pristine/tampered pairs of `size`×`size` images. Pairs
/// are split 70/15/15 (train/val/test) by a seeded shuffle; both members
/// of a pair share a split. `mode = None` cycles through all tamper modes.
pub fn synth_benchmark(count: usize, size: u32, seed: u64, mode: Option<TamperMode>) -> Result<Vec<SynthPair>> {
    if size < 8 {
        return Err(Error::arg(format!("synthetic images must be at least 8 pixels, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut rng);
    let n_train = (count as f64 * 0.70).round() as usize;
    let n_val = (count as f64 * 0.15).round() as usize;
    let mut splits = vec![Split::Test; count];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    let mut pairs = Vec::with_capacity(count);
    for (i, split) in splits.into_iter().enumerate() {
        let m = mode.unwrap_or(TamperMode::ALL[i % TamperMode::ALL.len()]);
        let source = synth_pristine(size, &mut rng);
        let donor = synth_pristine(size, &mut rng);
        let mut tampered = synth_tamper(&source, &donor, &mut rng, m)?;
        tampered.id = format!("synth{i:05}_fake");
        let pristine = Sample {
            id: format!("synth{i:05}_real"),
            image: source,
            label: 0,
            mask: Some(BinaryMask::zeros(size as usize, size as usize, MaskOrigin::GroundTruth)),
            method: Method::Pristine,
        };
        pairs.push(SynthPair { pristine, tampered, mode: m, split });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_paste_mask_is_the_rect() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let src = synth_pristine(32, &mut rng);
        let donor = smooth(&synth_pristine(32, &mut rng));
        let region = Region::Rect { x: 5, y: 7, w: 10, h: 6 };
        let (_, mask) = paste_region(&src, &donor, region, 0.0).unwrap();
        let expect = BinaryMask::from_fn(32, 32, MaskOrigin::GroundTruth, |x, y| (5..15).contains(&x) && (7..13).contains(&y));
        assert_eq!(mask, expect);
    }

    #[test]
    fn empty_region_gives_pristine() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = synth_pristine(16, &mut rng);
        let donor = synth_pristine(16, &mut rng);
        let region = Region::Ellipse { cx: 8.0, cy: 8.0, rx: 0.0, ry: 4.0 };
        let s = synth_tamper_in(&src, &donor, region, TamperMode::EllipsePaste, &mut rng).unwrap();
        assert_eq!(s.label, 0);
        assert_eq!(s.image, src);
        assert_eq!(s.mask.unwrap().foreground(), 0);
    }

    #[test]
    fn mode_names_parse() {
        for m in TamperMode::ALL {
            assert_eq!(m.as_str().parse::<TamperMode>().unwrap(), m);
        }
        assert_eq!("blend-paste".parse::<TamperMode>().unwrap(), TamperMode::BlendPaste);
    }

    #[test]
    fn benchmark_split_proportions() {
        let pairs = synth_benchmark(20, 16, 4, None).unwrap();
        let count = |s| pairs.iter().filter(|p| p.split == s).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (14, 3, 3));
        for p in &pairs {
            assert_eq!(p.tampered.label, 1);
            p.tampered.validate().unwrap();
            p.pristine.validate().unwrap();
        }
    }
}
