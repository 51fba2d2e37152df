//! Mixed training over real and fake samples with Adam.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{ArchId, ArchSpec, Model, Task, DESK_WIDTH};
use crate::checkpoint::save_checkpoint;
use crate::data::{iterate_batches, BatchOptions, Manifest, SampleSource, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, EvalMode, EvalOptions};
use crate::graph::Graph;
use crate::loss::{bce_cls, bce_seg};
use crate::optim::Adam;
use crate::tensor::Shape;

fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    16
}
fn default_crop() -> u32 {
    64
}
fn default_width() -> f64 {
    DESK_WIDTH
}
fn default_tau() -> f64 {
    0.5
}

/// Experiment configuration. Serialized field names are the JSON config
/// keys. `epochs` has no default and must always be given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub arch_id: ArchId,
    pub task: Task,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default = "default_crop")]
    pub crop_size: u32,
    #[serde(default = "default_width")]
    pub width_multiplier: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tau")]
    pub tau1: f64,
    #[serde(default = "default_tau")]
    pub tau2: f64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub manifest_path: Option<PathBuf>,
    /// Validate every this many steps; 0 validates only after the last step.
    #[serde(default)]
    pub eval_every: usize,
    /// Stop after this many optimizer steps even if epochs remain.
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Reject training images whose shorter side is below `crop_size`
    /// instead of reflect-padding them.
    #[serde(default)]
    pub require_full_crop: bool,
}

impl TrainConfig {
    pub fn new(arch_id: ArchId, task: Task, epochs: usize) -> Self {
        TrainConfig {
            arch_id,
            task,
            lr: default_lr(),
            batch_size: default_batch(),
            epochs,
            crop_size: default_crop(),
            width_multiplier: default_width(),
            seed: 0,
            tau1: default_tau(),
            tau2: default_tau(),
            output_dir: None,
            manifest_path: None,
            eval_every: 0,
            max_steps: None,
            require_full_crop: false,
        }
    }

    /// Full-size settings: batch 64, 256-pixel crops, full channel width.
    pub fn paper_scale(mut self) -> Self {
        self.batch_size = 64;
        self.crop_size = 256;
        self.width_multiplier = 1.0;
        self.require_full_crop = true;
        self
    }

    pub fn spec(&self) -> ArchSpec {
        ArchSpec::new(self.arch_id, self.task).with_width(self.width_multiplier)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Load(format!("config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Check every invariant that can be checked without data.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::arg(format!("lr must be a finite non-negative number, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::arg("epochs must be >= 1"));
        }
        if self.max_steps == Some(0) {
            return Err(Error::arg("max_steps must be >= 1"));
        }
        for (name, t) in [("tau1", self.tau1), ("tau2", self.tau2)] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::arg(format!("{name} must lie in (0, 1), got {t}")));
            }
        }
        let model = Model::<f32>::build(self.spec(), self.seed)?;
        let c = self.crop_size as usize;
        model
            .check_input(Shape::new(1, 3, c, c))
            .map_err(|e| Error::arg(format!("crop_size {} incompatible with {}: {e}", self.crop_size, self.spec().label())))
    }

    fn validation_mode(&self) -> EvalMode {
        match self.task {
            Task::Seg => EvalMode::SegDirect,
            Task::Cls => EvalMode::ClsDirect,
        }
    }
}

/// One optimizer step in the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub val_metric: Option<f64>,
}

pub struct TrainOutcome {
    /// Weights after the last step.
    pub model: Model<f32>,
    /// Weights with the best validation metric; the final weights when no
    /// validation data was given.
    pub best: Model<f32>,
    pub best_metric: Option<f64>,
    pub best_step: usize,
    pub history: Vec<LogRow>,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let mut out = String::from("step,epoch,loss,val_metric\n");
        for r in &self.history {
            let v = r.val_metric.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{v}", r.step, r.epoch, r.loss);
        }
        out
    }
}

/// Validation score used for model selection: mean IoU for segmenters,
/// accuracy for classifiers.
pub fn validation_metric(config: &TrainConfig, model: &Model<f32>, val: &(impl SampleSource + ?Sized)) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    let mut opts = EvalOptions::new(config.validation_mode(), config.crop_size);
    opts.tau1 = config.tau1;
    opts.tau2 = config.tau2;
    opts.batch_size = config.batch_size;
    let report = evaluate_run(model, val, opts)?;
    Ok(match config.task {
        Task::Seg => report.average.miou,
        Task::Cls => report.average.accuracy,
    })
}

fn max_abs_grad(model: &Model<f32>) -> f64 {
    model.params().iter().filter_map(|p| p.grad.as_ref()).flat_map(|g| g.data().iter()).fold(0.0f64, |m, &v| {
        if v.is_finite() {
            m.max(v.abs() as f64)
        } else {
            f64::NAN
        }
    })
}

/// Train on in-memory or manifest-backed sources. Writes nothing to disk;
/// see [`train`] for the file-producing wrapper.
pub fn train_on(
    config: &TrainConfig,
    train: &(impl SampleSource + ?Sized),
    val: Option<&(impl SampleSource + ?Sized)>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::arg("training split is empty"));
    }
    let mut model = Model::<f32>::build(config.spec(), config.seed)?;
    let adam = Adam::new(config.lr);
    // data order and crops use a stream independent of weight init
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let opts = BatchOptions {
        task: config.task,
        batch_size: config.batch_size,
        crop: config.crop_size,
        train: true,
        require_masks: config.task == Task::Seg,
    };

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Model<f32>)> = None;
    let mut step = 0usize;
    let limit = config.max_steps.unwrap_or(usize::MAX);
    let mut consider = |model: &Model<f32>, step: usize| -> Result<Option<f64>> {
        let Some(val) = val else { return Ok(None) };
        let metric = validation_metric(config, model, val)?;
        if let Some(m) = metric {
            if best.as_ref().is_none_or(|(b, _, _)| m > *b) {
                best = Some((m, step, model.clone()));
            }
        }
        Ok(metric)
    };

    'epochs: for epoch in 0..config.epochs {
        for batch in iterate_batches(train, opts, &mut rng)? {
            let batch = batch?;
            let mut g = Graph::<f32>::new();
            let x = g.input(batch.images.clone());
            let loss = match config.task {
                Task::Seg => {
                    let z = model.forward_seg_train(&mut g, x)?;
                    let masks = batch.flat_masks().ok_or_else(|| Error::State("segmentation batch without masks".into()))?;
                    bce_seg(&mut g, z, &masks)?
                }
                Task::Cls => {
                    let z = model.forward_cls_train(&mut g, x)?;
                    bce_cls(&mut g, z, &batch.labels)?
                }
            };
            let value = loss.value(&g);
            g.backward_into(loss.loss, model.params_mut())?;
            let max_grad = max_abs_grad(&model);
            if !value.is_finite() || !max_grad.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training state at step {}: loss {value}, lr {}, max |grad| {max_grad}",
                    step + 1,
                    config.lr
                )));
            }
            adam.step(model.params_mut())?;
            model.params_mut().zero_grad();
            step += 1;

            let last = step >= limit;
            let due = config.eval_every > 0 && step.is_multiple_of(config.eval_every);
            let val_metric = if due { consider(&model, step)? } else { None };
            history.push(LogRow { step, epoch, loss: value, val_metric });
            if last {
                break 'epochs;
            }
        }
    }
    if history.last().is_some_and(|r| r.val_metric.is_none()) {
        let metric = consider(&model, step)?;
        if let Some(row) = history.last_mut() {
            row.val_metric = metric;
        }
    }

    let (best_metric, best_step, best_model) = match best {
        Some((m, s, b)) => (Some(m), s, b),
        None => (None, step, model.clone()),
    };
    Ok(TrainOutcome { model, best: best_model, best_metric, best_step, history })
}

fn check_image_sizes(manifest: &Manifest, crop: u32) -> Result<()> {
    for rec in manifest.records.iter().filter(|r| r.split == Split::Train) {
        let path = manifest.resolve(&rec.image_path);
        let (w, h) = image::image_dimensions(&path).map_err(|e| Error::record(&path, e.to_string()))?;
        if w.min(h) < crop {
            return Err(Error::record(&path, format!("image {w}x{h} is smaller than the {crop}-pixel crop")));
        }
    }
    Ok(())
}

/// Train from `config.manifest_path` and, when `config.output_dir` is set,
/// write `config.json`, `train_log.csv`, `best.ckpt` and `final.ckpt`.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let path = config.manifest_path.as_deref().ok_or_else(|| Error::arg("manifest_path is required"))?;
    let manifest = Manifest::load(path)?;
    if config.require_full_crop {
        check_image_sizes(&manifest, config.crop_size)?;
    }
    let train_split = manifest.split(Split::Train);
    if train_split.is_empty() {
        return Err(Error::Load(format!("{}: no records in the train split", path.display())));
    }
    let val_split = manifest.split(Split::Val);
    let outcome = train_on(config, &train_split, Some(&val_split))?;
    if let Some(dir) = &config.output_dir {
        write_outputs(config, &outcome, dir)?;
    }
    Ok(outcome)
}

pub fn write_outputs(config: &TrainConfig, outcome: &TrainOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg = dir.join("config.json");
    fs::write(&cfg, config.to_json()).map_err(|e| Error::io(&cfg, e))?;
    let log = dir.join("train_log.csv");
    fs::write(&log, outcome.log_csv()).map_err(|e| Error::io(&log, e))?;
    save_checkpoint(&outcome.best, &dir.join("best.ckpt"))?;
    save_checkpoint(&outcome.model, &dir.join("final.ckpt"))
}
