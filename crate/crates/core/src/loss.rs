//! Binary cross-entropy supervision for the image-level and per-pixel tasks.
//!
//! Both losses take raw logits and evaluate `-(1-l)·ln(1-p) - l·ln(p)` with
//! `p = sigmoid(z)` in the overflow-free form `max(z,0) - z·l + ln(1+e^{-|z|})`.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::real::Real;

#[derive(Clone, Copy, Debug)]
pub struct LossValue {
    /// Scalar (1×1×1×1) node in the graph.
    pub loss: Var,
    /// Number of terms averaged into the loss.
    pub count: usize,
}

impl LossValue {
    pub fn value<T: Real>(&self, g: &Graph<T>) -> f64 {
        g.value(self.loss).data()[0].f64()
    }
}

fn binary_targets<T: Real>(labels: &[u8], what: &str) -> Result<Vec<T>> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| match l {
            0 => Ok(T::zero()),
            1 => Ok(T::one()),
            other => Err(Error::arg(format!("{what} {i} is {other}, expected 0 or 1"))),
        })
        .collect()
}

/// Image-level loss over logits shaped (N, 1, 1, 1).
pub fn bce_cls<T: Real>(g: &mut Graph<T>, logits: Var, labels: &[u8]) -> Result<LossValue> {
    let s = g.shape(logits);
    if s.c() != 1 || s.h() != 1 || s.w() != 1 || s.n() != labels.len() {
        return Err(Error::dim(format!("bce_cls: logits {s} do not match {} labels; expected ({}, 1, 1, 1)", labels.len(), labels.len())));
    }
    let targets = binary_targets(labels, "label")?;
    let loss = g.bce_with_logits(logits, targets)?;
    Ok(LossValue { loss, count: labels.len() })
}

/// Per-pixel loss over a (N, 1, H, W) logit map and a row-major N·H·W mask;
/// averaged jointly over pixels and samples.
pub fn bce_seg<T: Real>(g: &mut Graph<T>, logit_map: Var, mask: &[u8]) -> Result<LossValue> {
    let s = g.shape(logit_map);
    if s.c() != 1 || s.numel() != mask.len() {
        return Err(Error::dim(format!("bce_seg: logit map {s} is not aligned with a mask of {} pixels", mask.len())));
    }
    let targets = binary_targets(mask, "mask pixel")?;
    let loss = g.bce_with_logits(logit_map, targets)?;
    Ok(LossValue { loss, count: mask.len() })
}
