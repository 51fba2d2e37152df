//! Image-level accuracy and per-pixel IoU bookkeeping.
//!
//! IoUs are computed per image and macro-averaged within each method.
//! Real images have no foreground, so they never contribute to Fg-IoU;
//! their mIoU is Bg-IoU alone. Cross-method averages use whatever is
//! defined for each method.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::data::Method;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;

type Column = fn(&MethodMetrics) -> Option<f64>;

pub const DEFAULT_TAU2: f64 = 0.5;

/// Reduce a predicted mask to an image label: 1 iff its foreground
/// fraction is at least `tau2`.
pub fn aggregate_label(mask: &BinaryMask, tau2: f64) -> Result<u8> {
    if !(tau2 > 0.0 && tau2 < 1.0) {
        return Err(Error::arg(format!("tau2 must lie in (0, 1), got {tau2}")));
    }
    Ok(u8::from(mask.mean() >= tau2))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Tally {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Tally {
    pub fn record(&mut self, pred: bool, truth: bool) {
        match (pred, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn merge(&mut self, other: &Tally) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn of_masks(pred: &BinaryMask, gt: &BinaryMask) -> Result<Tally> {
        check_dims(pred, gt)?;
        let mut t = Tally::default();
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            t.record(p == 1, g == 1);
        }
        Ok(t)
    }
}

fn check_dims(pred: &BinaryMask, gt: &BinaryMask) -> Result<()> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(Error::dim(format!("prediction {}x{} vs ground truth {}x{}", pred.width(), pred.height(), gt.width(), gt.height())));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Iou {
    /// Undefined when neither mask has foreground.
    pub fg: Option<f64>,
    /// Undefined when neither mask has background.
    pub bg: Option<f64>,
}

impl Iou {
    pub fn mean(&self) -> Option<f64> {
        mean_defined([self.fg, self.bg])
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Foreground IoU `TP/(TP+FP+FN)` and its background counterpart.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<Iou> {
    let t = Tally::of_masks(pred, gt)?;
    Ok(Iou { fg: ratio(t.tp, t.tp + t.fp + t.fn_), bg: ratio(t.tn, t.tn + t.fp + t.fn_) })
}

pub fn accuracy(preds: &[u8], gts: &[u8]) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::dim(format!("{} predictions vs {} labels", preds.len(), gts.len())));
    }
    if preds.is_empty() {
        return Err(Error::arg("accuracy of an empty set"));
    }
    let hits = preds.iter().zip(gts).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

fn mean_defined(vals: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = vals.into_iter().flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct MethodMetrics {
    pub images: usize,
    pub accuracy: Option<f64>,
    pub fg_iou: Option<f64>,
    pub bg_iou: Option<f64>,
    pub miou: Option<f64>,
    /// Pixel tallies in mask modes, image tallies in label modes.
    pub counts: Tally,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub mode: String,
    pub per_method: BTreeMap<Method, MethodMetrics>,
    pub average: MethodMetrics,
    pub totals: Tally,
}

#[derive(Clone, Copy, Debug, Default)]
struct Acc {
    images: usize,
    correct: usize,
    labelled: usize,
    fg_sum: f64,
    fg_n: usize,
    bg_sum: f64,
    bg_n: usize,
    tally: Tally,
}

/// Streaming accumulator behind [`MetricsReport`].
#[derive(Clone, Debug, Default)]
pub struct MetricsAccumulator {
    mode: String,
    per: BTreeMap<Method, Acc>,
}

impl MetricsAccumulator {
    pub fn new(mode: impl Into<String>) -> Self {
        MetricsAccumulator { mode: mode.into(), per: BTreeMap::new() }
    }

    pub fn add_label(&mut self, method: Method, pred: u8, truth: u8) {
        let a = self.per.entry(method).or_default();
        a.images += 1;
        a.labelled += 1;
        a.correct += usize::from(pred == truth);
        a.tally.record(pred == 1, truth == 1);
    }

    /// Score one predicted mask; `label` is the image-level ground truth.
    pub fn add_mask(&mut self, method: Method, label: u8, pred: &BinaryMask, gt: &BinaryMask) -> Result<Iou> {
        let t = Tally::of_masks(pred, gt)?;
        let score = Iou { fg: ratio(t.tp, t.tp + t.fp + t.fn_), bg: ratio(t.tn, t.tn + t.fp + t.fn_) };
        let a = self.per.entry(method).or_default();
        a.images += 1;
        a.tally.merge(&t);
        if label == 1 {
            if let Some(v) = score.fg {
                a.fg_sum += v;
                a.fg_n += 1;
            }
        }
        if let Some(v) = score.bg {
            a.bg_sum += v;
            a.bg_n += 1;
        }
        Ok(score)
    }

    pub fn finish(&self) -> MetricsReport {
        let mut per_method = BTreeMap::new();
        let mut totals = Tally::default();
        for (&m, a) in &self.per {
            let fg = ratio_f(a.fg_sum, a.fg_n);
            let bg = ratio_f(a.bg_sum, a.bg_n);
            per_method.insert(
                m,
                MethodMetrics {
                    images: a.images,
                    accuracy: ratio(a.correct as u64, a.labelled as u64),
                    fg_iou: fg,
                    bg_iou: bg,
                    miou: mean_defined([fg, bg]),
                    counts: a.tally,
                },
            );
            totals.merge(&a.tally);
        }
        let vals: Vec<&MethodMetrics> = per_method.values().collect();
        let average = MethodMetrics {
            images: vals.iter().map(|m| m.images).sum(),
            accuracy: mean_defined(vals.iter().map(|m| m.accuracy)),
            fg_iou: mean_defined(vals.iter().map(|m| m.fg_iou)),
            bg_iou: mean_defined(vals.iter().map(|m| m.bg_iou)),
            miou: mean_defined(vals.iter().map(|m| m.miou)),
            counts: totals,
        };
        MetricsReport { mode: self.mode.clone(), per_method, average, totals }
    }
}

fn ratio_f(sum: f64, n: usize) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

pub const CSV_HEADER: &str = "method,images,accuracy,fg_iou,bg_iou,miou,tp,fp,fn,tn";

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", x * 100.0)).unwrap_or_else(|| "-".into())
}

impl MetricsReport {
    /// One row per method plus a final `AVG` row; undefined values are
    /// empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        let rows = self.per_method.iter().map(|(m, v)| (m.as_str(), v)).chain(std::iter::once(("AVG", &self.average)));
        for (name, v) in rows {
            let c = v.counts;
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{},{},{},{},{}",
                v.images,
                cell(v.accuracy),
                cell(v.fg_iou),
                cell(v.bg_iou),
                cell(v.miou),
                c.tp,
                c.fp,
                c.fn_,
                c.tn
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, csv: &Path, json: &Path) -> Result<()> {
        std::fs::write(csv, self.to_csv()).map_err(|e| Error::io(csv, e))?;
        std::fs::write(json, self.to_json()).map_err(|e| Error::io(json, e))
    }

    /// Percent grid with methods as columns and metrics as rows.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let cols: Vec<(&str, &MethodMetrics)> =
            self.per_method.iter().map(|(m, v)| (m.as_str(), v)).chain(std::iter::once(("Avg", &self.average))).collect();
        let _ = write!(out, "{:<10}", self.mode);
        for (name, _) in &cols {
            let _ = write!(out, "{name:>9}");
        }
        out.push('\n');
        let rows: [(&str, Column); 4] =
            [("accuracy", |m| m.accuracy), ("mIoU", |m| m.miou), ("Bg-IoU", |m| m.bg_iou), ("Fg-IoU", |m| m.fg_iou)];
        for (label, f) in rows {
            if cols.iter().all(|(_, m)| f(m).is_none()) {
                continue;
            }
            let _ = write!(out, "{label:<10}");
            for (_, m) in &cols {
                let _ = write!(out, "{:>9}", pct(f(m)));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::MaskOrigin;

    fn mask(w: usize, h: usize, v: &[u8]) -> BinaryMask {
        BinaryMask::from_vec(w, h, v.to_vec(), MaskOrigin::GroundTruth).unwrap()
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_label(&mask(2, 2, &[1, 1, 1, 0]), 0.5).unwrap(), 1);
        assert_eq!(aggregate_label(&mask(2, 2, &[0; 4]), 0.01).unwrap(), 0);
        assert!(aggregate_label(&mask(1, 1, &[1]), 1.0).is_err());
    }

    #[test]
    fn iou_examples() {
        let gt = mask(2, 2, &[1, 1, 0, 0]);
        let same = iou(&gt, &gt).unwrap();
        assert_eq!((same.fg, same.bg), (Some(1.0), Some(1.0)));
        let r = iou(&mask(2, 2, &[1, 0, 0, 0]), &gt).unwrap();
        assert_eq!(r.fg, Some(0.5));
        assert!((r.bg.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let empty = mask(2, 2, &[0; 4]);
        let p = iou(&empty, &empty).unwrap();
        assert_eq!((p.fg, p.bg), (None, Some(1.0)));
        assert!(matches!(iou(&empty, &mask(1, 4, &[0; 4])), Err(Error::Dimension(_))));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 1, 1, 1], &[1, 0, 1, 0]).unwrap(), 0.5);
        assert!(matches!(accuracy(&[], &[]), Err(Error::Argument(_))));
    }

    #[test]
    fn pristine_excluded_from_fg() {
        let mut acc = MetricsAccumulator::new("seg-direct");
        let empty = mask(2, 2, &[0; 4]);
        let fp = mask(2, 2, &[1, 0, 0, 0]);
        acc.add_mask(Method::Pristine, 0, &fp, &empty).unwrap();
        let gt = mask(2, 2, &[1, 1, 0, 0]);
        acc.add_mask(Method::Synth, 1, &gt, &gt).unwrap();
        let r = acc.finish();
        let p = r.per_method[&Method::Pristine];
        assert_eq!(p.fg_iou, None);
        assert_eq!(p.bg_iou, Some(0.75));
        assert_eq!(p.miou, Some(0.75));
        assert_eq!(r.average.fg_iou, Some(1.0));
        assert_eq!(r.average.bg_iou, Some(0.875));
        assert_eq!(r.average.miou, Some(0.875));
        assert_eq!(r.totals.total(), 8);
    }

    #[test]
    fn csv_layout() {
        let mut acc = MetricsAccumulator::new("cls-direct");
        acc.add_label(Method::Pristine, 0, 0);
        acc.add_label(Method::Synth, 0, 1);
        let csv = acc.finish().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "SYNTH,1,0.000000,,,,0,0,1,0");
        assert_eq!(lines[2], "P,1,1.000000,,,,0,0,0,1");
        assert_eq!(lines[3], "AVG,2,0.500000,,,,0,0,1,1");
    }
}
