use image::RgbImage;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::manifest::BBox;
use super::preprocess::{center_crop_pair, enlarge_and_crop, random_crop_pair, resize_shorter_then_crop_pair, Placement};
use super::sample::{Method, Sample};
use crate::arch::Task;
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, MaskOrigin};
use crate::tensor::{Shape, Tensor};

pub const INPUT_MEAN: f32 = 0.5;
pub const INPUT_STD: f32 = 0.5;
const BBOX_SCALE: f64 = 2.0;

/// Indexed access to samples, either in memory or behind a manifest.
pub trait SampleSource {
    fn len(&self) -> usize;
    fn load(&self, i: usize) -> Result<Sample>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn bbox(&self, _i: usize) -> Option<BBox> {
        None
    }
}

impl SampleSource for [Sample] {
    fn len(&self) -> usize {
        <[Sample]>::len(self)
    }

    fn load(&self, i: usize) -> Result<Sample> {
        Ok(self[i].clone())
    }
}

impl SampleSource for Vec<Sample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn load(&self, i: usize) -> Result<Sample> {
        Ok(self[i].clone())
    }
}

/// Pixels scaled to [0, 1], then normalized per channel by mean/std 0.5.
pub fn image_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = img.dimensions();
    Tensor::from_fn(Shape::new(1, 3, h as usize, w as usize), |[_, c, y, x]| {
        let v = img.get_pixel(x as u32, y as u32).0[c] as f32 / 255.0;
        (v - INPUT_MEAN) / INPUT_STD
    })
}

#[derive(Clone, Copy, Debug)]
pub struct BatchOptions {
    pub task: Task,
    pub batch_size: usize,
    pub crop: u32,
    /// Shuffle order and randomize crops (training); otherwise sequential
    /// order with center crops.
    pub train: bool,
    /// Fail on fake samples without a ground-truth mask.
    pub require_masks: bool,
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub labels: Vec<u8>,
    /// Present for every sample when all samples carry masks.
    pub masks: Option<Vec<BinaryMask>>,
    pub methods: Vec<Method>,
    pub ids: Vec<String>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Masks flattened row-major over the batch, for per-pixel losses.
    pub fn flat_masks(&self) -> Option<Vec<u8>> {
        self.masks.as_ref().map(|ms| ms.iter().flat_map(|m| m.data().iter().copied()).collect())
    }
}

/// Iterator over batches of a [`SampleSource`].
pub struct Batches<'a, S: SampleSource + ?Sized> {
    source: &'a S,
    order: Vec<usize>,
    pos: usize,
    opts: BatchOptions,
    rng: &'a mut ChaCha8Rng,
}

/// Shuffles with `rng` when `opts.train`, and draws crop offsets from the
/// same generator, so a given seed fixes the whole epoch.
pub fn iterate_batches<'a, S: SampleSource + ?Sized>(source: &'a S, opts: BatchOptions, rng: &'a mut ChaCha8Rng) -> Result<Batches<'a, S>> {
    if opts.batch_size == 0 {
        return Err(Error::arg("batch size must be >= 1"));
    }
    if opts.crop == 0 {
        return Err(Error::arg("crop size must be >= 1"));
    }
    let mut order: Vec<usize> = (0..source.len()).collect();
    if opts.train {
        order.shuffle(rng);
    }
    Ok(Batches { source, order, pos: 0, opts, rng })
}

impl<S: SampleSource + ?Sized> Batches<'_, S> {
    fn prepare(&mut self, i: usize) -> Result<(Tensor<f32>, Sample)> {
        let mut s = self.source.load(i)?;
        if s.label == 0 && s.mask.is_none() {
            let (w, h) = s.image.dimensions();
            s.mask = Some(BinaryMask::zeros(w as usize, h as usize, MaskOrigin::GroundTruth));
        }
        if self.opts.require_masks && s.mask.is_none() {
            return Err(Error::Record { path: s.id.clone().into(), message: "fake sample has no ground-truth mask".into() });
        }
        if let Some(bbox) = self.source.bbox(i) {
            let (img, m) = enlarge_and_crop(&s.image, s.mask.as_ref(), bbox, BBOX_SCALE)?;
            s.image = img;
            s.mask = m;
        }
        let crop = self.opts.crop;
        let (img, mask) = match (self.opts.task, self.opts.train) {
            (Task::Seg, true) => random_crop_pair(&s.image, s.mask.as_ref(), crop, &mut *self.rng)?,
            (Task::Seg, false) => center_crop_pair(&s.image, s.mask.as_ref(), crop)?,
            (Task::Cls, true) => resize_shorter_then_crop_pair(&s.image, s.mask.as_ref(), crop, Placement::Random(&mut *self.rng))?,
            (Task::Cls, false) => resize_shorter_then_crop_pair(&s.image, s.mask.as_ref(), crop, Placement::<ChaCha8Rng>::Center)?,
        };
        let t = image_to_tensor(&img);
        s.image = img;
        s.mask = mask;
        Ok((t, s))
    }

    /// Number of batches left.
    pub fn remaining(&self) -> usize {
        (self.order.len() - self.pos).div_ceil(self.opts.batch_size)
    }
}

impl<S: SampleSource + ?Sized> Iterator for Batches<'_, S> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.opts.batch_size).min(self.order.len());
        let idx: Vec<usize> = self.order[self.pos..end].to_vec();
        self.pos = end;
        let mut tensors = Vec::with_capacity(idx.len());
        let mut labels = Vec::with_capacity(idx.len());
        let mut masks = Some(Vec::with_capacity(idx.len()));
        let mut methods = Vec::with_capacity(idx.len());
        let mut ids = Vec::with_capacity(idx.len());
        for i in idx {
            let (t, s) = match self.prepare(i) {
                Ok(v) => v,
                Err(e) => return Some(Err(e)),
            };
            tensors.push(t);
            labels.push(s.label);
            match (s.mask, masks.as_mut()) {
                (Some(m), Some(ms)) => ms.push(m),
                _ => masks = None,
            }
            methods.push(s.method);
            ids.push(s.id);
        }
        Some(Tensor::stack(&tensors).map(|images| Batch { images, labels, masks, methods, ids }))
    }
}
