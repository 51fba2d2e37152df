//! Scoring a trained model in one of four prediction modes.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{Model, Task};
use crate::cam::{cam_masks, masks_from_logits};
use crate::data::{iterate_batches, BatchOptions, SampleSource};
use crate::error::{Error, Result};
use crate::kernels::stable_sigmoid;
use crate::metrics::{aggregate_label, MetricsAccumulator, MetricsReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Image label from the classifier head.
    ClsDirect,
    /// Mask from the thresholded class activation map.
    ClsCam,
    /// Mask from the segmentation head.
    SegDirect,
    /// Image label from the segmentation mask's foreground fraction.
    SegAgg,
}

impl EvalMode {
    pub const ALL: [EvalMode; 4] = [EvalMode::ClsDirect, EvalMode::ClsCam, EvalMode::SegDirect, EvalMode::SegAgg];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::ClsDirect => "cls-direct",
            EvalMode::ClsCam => "cls-cam",
            EvalMode::SegDirect => "seg-direct",
            EvalMode::SegAgg => "seg-agg",
        }
    }

    /// Whether the mode scores masks rather than labels.
    pub fn needs_masks(self) -> bool {
        matches!(self, EvalMode::ClsCam | EvalMode::SegDirect)
    }

    pub fn task(self) -> Task {
        match self {
            EvalMode::ClsDirect | EvalMode::ClsCam => Task::Cls,
            EvalMode::SegDirect | EvalMode::SegAgg => Task::Seg,
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        EvalMode::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| Error::arg(format!("unknown eval mode '{s}' (expected cls-direct, cls-cam, seg-direct, seg-agg)")))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub mode: EvalMode,
    pub tau1: f64,
    pub tau2: f64,
    pub crop: u32,
    pub batch_size: usize,
}

impl EvalOptions {
    pub fn new(mode: EvalMode, crop: u32) -> Self {
        EvalOptions { mode, tau1: crate::cam::DEFAULT_TAU1, tau2: crate::metrics::DEFAULT_TAU2, crop, batch_size: 16 }
    }
}

/// Run `model` over every sample of `source` and score it. Masks are
/// predicted at crop resolution and compared with the identically cropped
/// ground truth. Samples are visited in order with center crops.
pub fn evaluate_run(model: &Model<f32>, source: &(impl SampleSource + ?Sized), opts: EvalOptions) -> Result<MetricsReport> {
    let mode = opts.mode;
    if !(opts.tau1 > 0.0 && opts.tau1 < 1.0) {
        return Err(Error::arg(format!("tau1 must lie in (0, 1), got {}", opts.tau1)));
    }
    if !(opts.tau2 > 0.0 && opts.tau2 < 1.0) {
        return Err(Error::arg(format!("tau2 must lie in (0, 1), got {}", opts.tau2)));
    }
    let batch_opts =
        BatchOptions { task: mode.task(), batch_size: opts.batch_size, crop: opts.crop, train: false, require_masks: mode.needs_masks() };
    // eval order and crops are deterministic, the generator is never drawn
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut acc = MetricsAccumulator::new(mode.as_str());
    for batch in iterate_batches(source, batch_opts, &mut rng)? {
        let batch = batch?;
        match mode {
            EvalMode::ClsDirect => {
                let logits = model.predict_cls(&batch.images)?;
                for ((&z, &y), &m) in logits.data().iter().zip(&batch.labels).zip(&batch.methods) {
                    acc.add_label(m, u8::from(stable_sigmoid(z as f64) >= 0.5), y);
                }
            }
            EvalMode::SegAgg => {
                let logits = model.predict_seg(&batch.images)?;
                for ((mask, &y), &m) in masks_from_logits(&logits, 0.5).iter().zip(&batch.labels).zip(&batch.methods) {
                    acc.add_label(m, aggregate_label(mask, opts.tau2)?, y);
                }
            }
            EvalMode::ClsCam | EvalMode::SegDirect => {
                let preds = if mode == EvalMode::ClsCam {
                    cam_masks(model, &batch.images, opts.tau1)?
                } else {
                    masks_from_logits(&model.predict_seg(&batch.images)?, 0.5)
                };
                let gts = batch.masks.as_ref().ok_or_else(|| Error::Record {
                    path: batch.ids.join(",").into(),
                    message: "batch is missing ground-truth masks".into(),
                })?;
                for (i, (p, gt)) in preds.iter().zip(gts).enumerate() {
                    acc.add_mask(batch.methods[i], batch.labels[i], p, gt)?;
                }
            }
        }
    }
    Ok(acc.finish())
}
