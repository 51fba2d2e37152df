use std::path::Path;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskOrigin {
    Cam,
    SegHead,
    GroundTruth,
}

/// Row-major binary grid; every value is exactly 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
    pub origin: MaskOrigin,
}

impl BinaryMask {
    pub fn zeros(width: usize, height: usize, origin: MaskOrigin) -> Self {
        BinaryMask { width, height, data: vec![0; width * height], origin }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u8>, origin: MaskOrigin) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dim(format!("mask {width}x{height} needs {} values, got {}", width * height, data.len())));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::arg(format!("mask value {v} is not 0 or 1")));
        }
        Ok(BinaryMask { width, height, data, origin })
    }

    pub fn from_fn(width: usize, height: usize, origin: MaskOrigin, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y) as u8);
            }
        }
        BinaryMask { width, height, data, origin }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value as u8;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn foreground(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// Fraction of pixels that are foreground.
    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.foreground() as f64 / self.data.len() as f64
    }

    pub fn inverted(&self) -> Self {
        BinaryMask { data: self.data.iter().map(|&v| 1 - v).collect(), ..self.clone() }
    }

    pub fn with_origin(mut self, origin: MaskOrigin) -> Self {
        self.origin = origin;
        self
    }

    /// Nearest-neighbour resize, same index rule as the tensor resize.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        BinaryMask::from_fn(width, height, self.origin, |x, y| self.get(x * self.width / width, y * self.height / height))
    }

    /// Sub-rectangle starting at (x, y).
    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Self> {
        if x + width > self.width || y + height > self.height {
            return Err(Error::dim(format!("crop {width}x{height}+{x}+{y} exceeds mask {}x{}", self.width, self.height)));
        }
        Ok(BinaryMask::from_fn(width, height, self.origin, |cx, cy| self.get(x + cx, y + cy)))
    }

    /// 0 → 0, 1 → 255.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            image::Luma([if self.get(x as usize, y as usize) { 255 } else { 0 }])
        })
    }

    /// Binarizes at > 127.
    pub fn from_gray(img: &GrayImage, origin: MaskOrigin) -> Self {
        let (w, h) = img.dimensions();
        BinaryMask::from_fn(w as usize, h as usize, origin, |x, y| img.get_pixel(x as u32, y as u32).0[0] > 127)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_gray().save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::record(path, e.to_string()))
    }

    pub fn load_png(path: &Path, origin: MaskOrigin) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::record(path, e.to_string()))?;
        Ok(Self::from_gray(&img.to_luma8(), origin))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_binary() {
        assert!(BinaryMask::from_vec(2, 1, vec![0, 2], MaskOrigin::Cam).is_err());
        assert!(BinaryMask::from_vec(2, 2, vec![0, 1], MaskOrigin::Cam).is_err());
    }

    #[test]
    fn gray_round_trip() {
        let m = BinaryMask::from_fn(5, 3, MaskOrigin::GroundTruth, |x, y| (x + y) % 3 == 0);
        assert_eq!(BinaryMask::from_gray(&m.to_gray(), MaskOrigin::GroundTruth), m);
    }

    #[test]
    fn nearest_resize_replicates() {
        let m = BinaryMask::from_vec(2, 1, vec![1, 0], MaskOrigin::Cam).unwrap();
        let r = m.resize_nearest(4, 2);
        assert_eq!(r.data(), &[1, 1, 0, 0, 1, 1, 0, 0]);
    }
}
