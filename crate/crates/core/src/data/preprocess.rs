use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::Rng;

use super::manifest::BBox;
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, MaskOrigin};

/// Foreground iff the largest per-channel absolute difference exceeds
/// `delta`.
pub fn compute_mask(forged: &RgbImage, original: &RgbImage, delta: u8) -> Result<BinaryMask> {
    if forged.dimensions() != original.dimensions() {
        return Err(Error::dim(format!("compute_mask: forged {:?} vs original {:?}", forged.dimensions(), original.dimensions())));
    }
    let (w, h) = forged.dimensions();
    Ok(BinaryMask::from_fn(w as usize, h as usize, MaskOrigin::GroundTruth, |x, y| {
        let a = forged.get_pixel(x as u32, y as u32).0;
        let b = original.get_pixel(x as u32, y as u32).0;
        (0..3).map(|c| a[c].abs_diff(b[c])).max().unwrap_or(0) > delta
    }))
}

/// Grow `bbox` by `scale` about its center, clamp to the image, and crop
/// image and mask identically.
pub fn enlarge_and_crop(image: &RgbImage, mask: Option<&BinaryMask>, bbox: BBox, scale: f64) -> Result<(RgbImage, Option<BinaryMask>)> {
    let (iw, ih) = image.dimensions();
    if bbox.w == 0 || bbox.h == 0 {
        return Err(Error::arg(format!("degenerate bounding box {bbox:?}")));
    }
    if bbox.x + bbox.w > iw || bbox.y + bbox.h > ih {
        return Err(Error::arg(format!("bounding box {bbox:?} outside {iw}x{ih} image")));
    }
    // written to reject NaN as well
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(scale > 0.0) {
        return Err(Error::arg(format!("scale must be positive, got {scale}")));
    }
    let span = |start: u32, len: u32, limit: u32| {
        let center = start as f64 + len as f64 / 2.0;
        let half = len as f64 * scale / 2.0;
        let lo = (center - half).round().max(0.0) as u32;
        let hi = ((center + half).round() as u32).min(limit);
        (lo, hi.max(lo + 1).min(limit))
    };
    let (x0, x1) = span(bbox.x, bbox.w, iw);
    let (y0, y1) = span(bbox.y, bbox.h, ih);
    let img = imageops::crop_imm(image, x0, y0, x1 - x0, y1 - y0).to_image();
    let m = match mask {
        Some(m) => Some(m.crop(x0 as usize, y0 as usize, (x1 - x0) as usize, (y1 - y0) as usize)?),
        None => None,
    };
    Ok((img, m))
}

fn reflect(i: i64, n: i64) -> u32 {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i.rem_euclid(period);
    (if r < n { r } else { period - r }) as u32
}

/// Mirror-pad (without repeating the edge) so both sides reach `size`;
/// the original content stays centered.
pub fn reflect_pad_pair(image: &RgbImage, mask: Option<&BinaryMask>, size: u32) -> (RgbImage, Option<BinaryMask>) {
    let (w, h) = image.dimensions();
    if w >= size && h >= size {
        return (image.clone(), mask.cloned());
    }
    let (nw, nh) = (w.max(size), h.max(size));
    let (ox, oy) = (((nw - w) / 2) as i64, ((nh - h) / 2) as i64);
    let src = |x: u32, y: u32| (reflect(x as i64 - ox, w as i64), reflect(y as i64 - oy, h as i64));
    let img = RgbImage::from_fn(nw, nh, |x, y| {
        let (sx, sy) = src(x, y);
        *image.get_pixel(sx, sy)
    });
    let m = mask.map(|m| {
        BinaryMask::from_fn(nw as usize, nh as usize, m.origin, |x, y| {
            let (sx, sy) = src(x as u32, y as u32);
            m.get(sx as usize, sy as usize)
        })
    });
    (img, m)
}

/// Where to place a crop window.
pub enum Placement<'a, R: Rng> {
    Random(&'a mut R),
    Center,
}

fn crop_pair_at(
    image: &RgbImage,
    mask: Option<&BinaryMask>,
    size: u32,
    placement: Placement<'_, impl Rng>,
) -> Result<(RgbImage, Option<BinaryMask>)> {
    if size == 0 {
        return Err(Error::arg("crop size must be >= 1"));
    }
    if let Some(m) = mask {
        if (m.width() as u32, m.height() as u32) != image.dimensions() {
            return Err(Error::dim(format!("mask {}x{} vs image {:?}", m.width(), m.height(), image.dimensions())));
        }
    }
    let (image, mask) = reflect_pad_pair(image, mask, size);
    let (w, h) = image.dimensions();
    let (x, y) = match placement {
        Placement::Random(rng) => (rng.gen_range(0..=w - size), rng.gen_range(0..=h - size)),
        Placement::Center => ((w - size) / 2, (h - size) / 2),
    };
    let img = imageops::crop_imm(&image, x, y, size, size).to_image();
    let m = match mask {
        Some(m) => Some(m.crop(x as usize, y as usize, size as usize, size as usize)?),
        None => None,
    };
    Ok((img, m))
}

/// `size`×`size` crop at a random offset shared by image and mask. Inputs
/// smaller than `size` are reflect-padded first.
pub fn random_crop_pair<R: Rng>(
    image: &RgbImage,
    mask: Option<&BinaryMask>,
    size: u32,
    rng: &mut R,
) -> Result<(RgbImage, Option<BinaryMask>)> {
    crop_pair_at(image, mask, size, Placement::Random(rng))
}

pub fn center_crop_pair(image: &RgbImage, mask: Option<&BinaryMask>, size: u32) -> Result<(RgbImage, Option<BinaryMask>)> {
    crop_pair_at(image, mask, size, Placement::<rand::rngs::mock::StepRng>::Center)
}

fn shorter_side_dims(w: u32, h: u32, size: u32) -> (u32, u32) {
    if w.min(h) == size {
        return (w, h);
    }
    if w <= h {
        (size, ((h as f64 * size as f64 / w as f64).round() as u32).max(size))
    } else {
        (((w as f64 * size as f64 / h as f64).round() as u32).max(size), size)
    }
}

/// Bilinear resize so the shorter side equals `size`, then a `size`×`size`
/// crop. The mask (if any) follows with nearest-neighbour resampling.
pub fn resize_shorter_then_crop_pair<R: Rng>(
    image: &RgbImage,
    mask: Option<&BinaryMask>,
    size: u32,
    placement: Placement<'_, R>,
) -> Result<(RgbImage, Option<BinaryMask>)> {
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 || size == 0 {
        return Err(Error::arg(format!("cannot resize {w}x{h} to shorter side {size}")));
    }
    let (nw, nh) = shorter_side_dims(w, h, size);
    let (img, m) = if (nw, nh) == (w, h) {
        (image.clone(), mask.cloned())
    } else {
        (imageops::resize(image, nw, nh, FilterType::Triangle), mask.map(|m| m.resize_nearest(nw as usize, nh as usize)))
    };
    crop_pair_at(&img, m.as_ref(), size, placement)
}

pub fn resize_shorter_then_crop<R: Rng>(image: &RgbImage, size: u32, rng: &mut R) -> Result<RgbImage> {
    Ok(resize_shorter_then_crop_pair(image, None, size, Placement::Random(rng))?.0)
}
