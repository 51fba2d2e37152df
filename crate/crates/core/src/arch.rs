//! Network definitions.
//!
//! Every model is a small layer DAG ending in a convolutional classifier that
//! emits a single-channel logit map. The segmentation view reads that map
//! directly (resized to the input); the classification view averages it. The
//! classifier is therefore always applied *before* pooling, which makes the
//! class activation map of a classification model identical to its dense
//! logit map.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels::BatchStats;
use crate::param::{ParamId, ParamStore, RunningStats};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Every layer output, plus batch statistics keyed by running-stat slot.
type LayerTrace = (Vec<Var>, Vec<(usize, BatchStats)>);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchId {
    #[serde(rename = "FN3")]
    Fn3,
    #[serde(rename = "VGG3")]
    Vgg3,
    #[serde(rename = "VGG5")]
    Vgg5,
    #[serde(rename = "VGG8")]
    Vgg8,
    #[serde(rename = "UNET4X")]
    Unet4x,
    #[serde(rename = "UNET8X")]
    Unet8x,
    #[serde(rename = "MESO_LITE")]
    MesoLite,
}

impl ArchId {
    pub const ALL: [ArchId; 7] = [ArchId::Fn3, ArchId::Vgg3, ArchId::Vgg5, ArchId::Vgg8, ArchId::Unet4x, ArchId::Unet8x, ArchId::MesoLite];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchId::Fn3 => "FN3",
            ArchId::Vgg3 => "VGG3",
            ArchId::Vgg5 => "VGG5",
            ArchId::Vgg8 => "VGG8",
            ArchId::Unet4x => "UNET4X",
            ArchId::Unet8x => "UNET8X",
            ArchId::MesoLite => "MESO_LITE",
        }
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        match norm.as_str() {
            "FN3" | "CONV3" => Ok(ArchId::Fn3),
            "VGG3" => Ok(ArchId::Vgg3),
            "VGG5" | "VGG4" => Ok(ArchId::Vgg5),
            "VGG8" | "VGG7" => Ok(ArchId::Vgg8),
            "UNET4X" => Ok(ArchId::Unet4x),
            "UNET8X" => Ok(ArchId::Unet8x),
            "MESO_LITE" | "MESOLITE" | "MESONET" => Ok(ArchId::MesoLite),
            _ => Err(Error::arg(format!("unknown architecture {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Cls,
    Seg,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Cls => "cls",
            Task::Seg => "seg",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cls" => Ok(Task::Cls),
            "seg" => Ok(Task::Seg),
            _ => Err(Error::arg(format!("unknown task {s:?}; expected cls or seg"))),
        }
    }
}

pub const DESK_WIDTH: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub arch: ArchId,
    pub task: Task,
    pub input_channels: usize,
    pub width_multiplier: f64,
}

impl ArchSpec {
    pub fn new(arch: ArchId, task: Task) -> Self {
        ArchSpec { arch, task, input_channels: 3, width_multiplier: DESK_WIDTH }
    }

    pub fn with_width(mut self, width: f64) -> Self {
        self.width_multiplier = width;
        self
    }

    /// Display name in the `FN3-seg` style.
    pub fn label(&self) -> String {
        format!("{}-{}", self.arch, self.task)
    }

    fn channels(&self, base: usize) -> usize {
        ((base as f64 * self.width_multiplier).round() as usize).max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Conv { weight: ParamId, bias: ParamId, stride: usize, padding: usize },
    BatchNorm { gamma: ParamId, beta: ParamId, stats: usize },
    Relu,
    MaxPool { k: usize, stride: usize },
    Upsample { factor: usize },
    Concat,
}

/// Layer input slot 0 is the image; slot `i + 1` is the output of layer `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Model<T: Real = f32> {
    arch: ArchSpec,
    layers: Vec<Layer>,
    params: ParamStore<T>,
    running: Vec<(String, RunningStats<T>)>,
}

/// Output of [`Model::describe`].
#[derive(Clone, Debug, Serialize)]
pub struct ModelSummary {
    pub arch: String,
    pub task: String,
    pub width_multiplier: f64,
    pub param_count: usize,
    pub total_stride: usize,
    pub min_input: usize,
    pub layers: Vec<String>,
}

struct Builder<'a, T: Real> {
    spec: ArchSpec,
    layers: Vec<Layer>,
    params: ParamStore<T>,
    running: Vec<(String, RunningStats<T>)>,
    rng: &'a mut ChaCha8Rng,
}

/// Handle to a value inside the builder: (slot, channels).
#[derive(Clone, Copy)]
struct Node {
    slot: usize,
    channels: usize,
}

impl<T: Real> Builder<'_, T> {
    fn push(&mut self, name: String, kind: LayerKind, inputs: Vec<usize>, channels: usize) -> Node {
        self.layers.push(Layer { name, kind, inputs });
        Node { slot: self.layers.len(), channels }
    }

    fn conv(&mut self, name: &str, x: Node, out: usize, k: usize, stride: usize, padding: usize) -> Result<Node> {
        let fan_in = x.channels * k * k;
        let std = (2.0 / fan_in as f64).sqrt();
        let shape = Shape::new(out, x.channels, k, k);
        let mut data = Vec::with_capacity(shape.numel());
        for _ in 0..shape.numel() {
            let z: f64 = StandardNormal.sample(self.rng);
            data.push(T::of(z * std));
        }
        let weight = self.params.add(format!("{name}.weight"), Tensor::from_vec(shape, data)?)?;
        let bias = self.params.add(format!("{name}.bias"), Tensor::zeros(Shape::new(1, out, 1, 1)))?;
        Ok(self.push(name.to_string(), LayerKind::Conv { weight, bias, stride, padding }, vec![x.slot], out))
    }

    fn bn(&mut self, name: &str, x: Node) -> Result<Node> {
        let c = x.channels;
        let gamma = self.params.add(format!("{name}.gamma"), Tensor::full(Shape::new(1, c, 1, 1), T::one()))?;
        let beta = self.params.add(format!("{name}.beta"), Tensor::zeros(Shape::new(1, c, 1, 1)))?;
        self.running.push((name.to_string(), RunningStats::new(c)));
        let stats = self.running.len() - 1;
        Ok(self.push(name.to_string(), LayerKind::BatchNorm { gamma, beta, stats }, vec![x.slot], c))
    }

    fn relu(&mut self, name: &str, x: Node) -> Node {
        self.push(name.to_string(), LayerKind::Relu, vec![x.slot], x.channels)
    }

    fn pool(&mut self, name: &str, x: Node) -> Node {
        self.push(name.to_string(), LayerKind::MaxPool { k: 2, stride: 2 }, vec![x.slot], x.channels)
    }

    fn up(&mut self, name: &str, x: Node) -> Node {
        self.push(name.to_string(), LayerKind::Upsample { factor: 2 }, vec![x.slot], x.channels)
    }

    fn concat(&mut self, name: &str, a: Node, b: Node) -> Node {
        self.push(name.to_string(), LayerKind::Concat, vec![a.slot, b.slot], a.channels + b.channels)
    }

    /// conv → BN → ReLU
    fn cbr(&mut self, prefix: &str, x: Node, out: usize, k: usize, stride: usize) -> Result<Node> {
        let c = self.conv(&format!("{prefix}conv"), x, out, k, stride, k / 2)?;
        let b = self.bn(&format!("{prefix}bn"), c)?;
        Ok(self.relu(&format!("{prefix}relu"), b))
    }

    fn classifier(&mut self, x: Node, k: usize) -> Result<Node> {
        self.conv("classifier", x, 1, k, 1, k / 2)
    }
}

const VGG16_HEAD: [Option<usize>; 9] = [Some(64), Some(64), None, Some(128), Some(128), None, Some(256), Some(256), Some(256)];

fn build_fn3<T: Real>(b: &mut Builder<'_, T>, x: Node) -> Result<()> {
    let (c1, c2) = (b.spec.channels(16), b.spec.channels(32));
    let conv1 = b.conv("conv1", x, c1, 7, 2, 3)?;
    let bn1 = b.bn("bn1", conv1)?;
    let r1 = b.relu("relu1", bn1);
    let conv2 = b.conv("conv2", r1, c2, 7, 2, 3)?;
    let bn2 = b.bn("bn2", conv2)?;
    let r2 = b.relu("relu2", bn2);
    b.classifier(r2, 3)?;
    Ok(())
}

/// First `convs` 3×3 conv layers of VGG16 with the max-pools that sit
/// between them; a pool that would follow the last kept conv is dropped.
fn build_vgg<T: Real>(b: &mut Builder<'_, T>, x: Node, convs: usize) -> Result<()> {
    let mut cur = x;
    let mut seen = 0;
    let mut pools = 0;
    for entry in VGG16_HEAD {
        if seen == convs {
            break;
        }
        match entry {
            Some(width) => {
                seen += 1;
                let c = b.conv(&format!("conv{seen}"), cur, b.spec.channels(width), 3, 1, 1)?;
                cur = b.relu(&format!("relu{seen}"), c);
            }
            None => {
                pools += 1;
                cur = b.pool(&format!("pool{pools}"), cur);
            }
        }
    }
    b.classifier(cur, 1)?;
    Ok(())
}

fn build_unet<T: Real>(b: &mut Builder<'_, T>, x: Node, downs: usize) -> Result<()> {
    let widths: Vec<usize> = (0..=downs).map(|i| b.spec.channels(16 << i)).collect();
    let block = |b: &mut Builder<'_, T>, name: &str, x: Node, c: usize| -> Result<Node> {
        let h = b.cbr(&format!("{name}.1"), x, c, 3, 1)?;
        b.cbr(&format!("{name}.2"), h, c, 3, 1)
    };
    let mut skips = Vec::with_capacity(downs);
    let mut cur = block(b, "enc0", x, widths[0])?;
    for (i, &w) in widths.iter().enumerate().skip(1) {
        skips.push(cur);
        let p = b.pool(&format!("down{i}"), cur);
        cur = block(b, &format!("enc{i}"), p, w)?;
    }
    for i in (0..downs).rev() {
        let u = b.up(&format!("up{i}"), cur);
        let cat = b.concat(&format!("skip{i}"), u, skips[i]);
        cur = block(b, &format!("dec{i}"), cat, widths[i])?;
    }
    b.classifier(cur, 1)?;
    Ok(())
}

fn inception<T: Real>(b: &mut Builder<'_, T>, name: &str, x: Node, widths: [usize; 3]) -> Result<Node> {
    let mut branches = Vec::with_capacity(3);
    for (k, w) in [1usize, 3, 5].into_iter().zip(widths) {
        let c = b.conv(&format!("{name}.b{k}x{k}"), x, b.spec.channels(w), k, 1, k / 2)?;
        branches.push(b.relu(&format!("{name}.relu{k}x{k}"), c));
    }
    let ab = b.concat(&format!("{name}.cat1"), branches[0], branches[1]);
    Ok(b.concat(&format!("{name}.cat2"), ab, branches[2]))
}

/// Two inception blocks and two conv stages, each followed by batchnorm
/// and (except the last) max-pooling; the classifier replaces everything
/// after the final batchnorm.
fn build_meso<T: Real>(b: &mut Builder<'_, T>, x: Node) -> Result<()> {
    let i1 = inception(b, "inc1", x, [8, 16, 16])?;
    let n1 = b.bn("inc1.bn", i1)?;
    let p1 = b.pool("pool1", n1);
    let i2 = inception(b, "inc2", p1, [8, 16, 16])?;
    let n2 = b.bn("inc2.bn", i2)?;
    let p2 = b.pool("pool2", n2);
    let c3 = b.conv("conv3", p2, b.spec.channels(32), 5, 1, 2)?;
    let r3 = b.relu("relu3", c3);
    let n3 = b.bn("bn3", r3)?;
    let p3 = b.pool("pool3", n3);
    let c4 = b.conv("conv4", p3, b.spec.channels(32), 5, 1, 2)?;
    let r4 = b.relu("relu4", c4);
    let n4 = b.bn("bn4", r4)?;
    b.classifier(n4, 1)?;
    Ok(())
}

impl<T: Real> Model<T> {
    /// Build with deterministic initialization from `seed`: He-normal conv
    /// weights, zero biases, unit gamma, zero beta.
    pub fn build(spec: ArchSpec, seed: u64) -> Result<Self> {
        if !(spec.width_multiplier > 0.0 && spec.width_multiplier.is_finite()) {
            return Err(Error::arg(format!("width multiplier must be positive, got {}", spec.width_multiplier)));
        }
        if spec.input_channels == 0 {
            return Err(Error::arg("input_channels must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder { spec, layers: Vec::new(), params: ParamStore::new(), running: Vec::new(), rng: &mut rng };
        let x = Node { slot: 0, channels: spec.input_channels };
        match spec.arch {
            ArchId::Fn3 => build_fn3(&mut b, x)?,
            ArchId::Vgg3 => build_vgg(&mut b, x, 2)?,
            ArchId::Vgg5 => build_vgg(&mut b, x, 4)?,
            ArchId::Vgg8 => build_vgg(&mut b, x, 7)?,
            ArchId::Unet4x => build_unet(&mut b, x, 2)?,
            ArchId::Unet8x => build_unet(&mut b, x, 3)?,
            ArchId::MesoLite => build_meso(&mut b, x)?,
        }
        Ok(Model { arch: spec, layers: b.layers, params: b.params, running: b.running })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn set_task(&mut self, task: Task) {
        self.arch.task = task;
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[(String, RunningStats<T>)] {
        &self.running
    }

    pub fn running_stats_mut(&mut self) -> &mut [(String, RunningStats<T>)] {
        &mut self.running
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn classifier_index(&self) -> usize {
        self.layers.len() - 1
    }

    /// Channels produced by each layer, computed from parameter shapes.
    pub fn layer_channels(&self) -> Vec<usize> {
        let mut ch = vec![self.arch.input_channels];
        for l in &self.layers {
            let c = match &l.kind {
                LayerKind::Conv { weight, .. } => self.params.get(*weight).shape().n(),
                LayerKind::Concat => l.inputs.iter().map(|&i| ch[i]).sum(),
                _ => ch[l.inputs[0]],
            };
            ch.push(c);
        }
        ch.split_off(1)
    }

    /// Product of all strides between the input and the logit map.
    pub fn total_stride(&self) -> usize {
        let mut stride = vec![1usize];
        for l in &self.layers {
            let s = match &l.kind {
                LayerKind::Conv { stride: s, .. } => stride[l.inputs[0]] * s,
                LayerKind::MaxPool { stride: s, .. } => stride[l.inputs[0]] * s,
                LayerKind::Upsample { factor } => stride[l.inputs[0]] / factor,
                _ => stride[l.inputs[0]],
            };
            stride.push(s.max(1));
        }
        *stride.last().unwrap_or(&1)
    }

    /// Smallest square input the model accepts; for UNets inputs must also
    /// be a multiple of this value so skip connections line up.
    pub fn min_input(&self) -> usize {
        match self.arch.arch {
            ArchId::Unet4x => 4,
            ArchId::Unet8x => 8,
            ArchId::MesoLite => 8,
            _ => self.total_stride().max(2),
        }
    }

    pub fn check_input(&self, shape: Shape) -> Result<()> {
        let [_, c, h, w] = shape.0;
        if c != self.arch.input_channels {
            return Err(Error::dim(format!(
                "{} expects {} input channels, got {c} (axis 1 of {shape})",
                self.arch.arch, self.arch.input_channels
            )));
        }
        let min = self.min_input();
        if h < min || w < min {
            return Err(Error::dim(format!("{} needs inputs of at least {min}x{min}, got {h}x{w}", self.arch.arch)));
        }
        if matches!(self.arch.arch, ArchId::Unet4x | ArchId::Unet8x) && (h % min != 0 || w % min != 0) {
            return Err(Error::dim(format!("{} needs input sides divisible by {min}, got {h}x{w}", self.arch.arch)));
        }
        Ok(())
    }

    pub fn describe(&self) -> ModelSummary {
        let channels = self.layer_channels();
        ModelSummary {
            arch: self.arch.arch.to_string(),
            task: self.arch.task.to_string(),
            width_multiplier: self.arch.width_multiplier,
            param_count: self.params.numel(),
            total_stride: self.total_stride(),
            min_input: self.min_input(),
            layers: self
                .layers
                .iter()
                .zip(&channels)
                .map(|(l, c)| {
                    let kind = match &l.kind {
                        LayerKind::Conv { weight, stride, padding, .. } => {
                            let k = self.params.get(*weight).shape().h();
                            format!("conv {k}x{k} s{stride} p{padding}")
                        }
                        LayerKind::BatchNorm { .. } => "batchnorm".into(),
                        LayerKind::Relu => "relu".into(),
                        LayerKind::MaxPool { k, stride } => format!("maxpool {k} s{stride}"),
                        LayerKind::Upsample { factor } => format!("upsample x{factor}"),
                        LayerKind::Concat => "concat".into(),
                    };
                    format!("{}: {kind} -> {c}", l.name)
                })
                .collect(),
        }
    }

    /// Evaluate layers up to and including `upto`, returning every layer
    /// output (index i holds layer i). Training mode uses batch statistics
    /// and reports them alongside the running-stat slot they belong to.
    fn run(&self, g: &mut Graph<T>, images: Var, training: bool, upto: usize) -> Result<LayerTrace> {
        self.check_input(g.shape(images))?;
        let mut slots = Vec::with_capacity(upto + 2);
        slots.push(images);
        let mut updates = Vec::new();
        for layer in &self.layers[..=upto] {
            let x = slots[layer.inputs[0]];
            let out = match &layer.kind {
                LayerKind::Conv { weight, bias, stride, padding } => {
                    let w = g.param(&self.params, *weight);
                    let b = g.param(&self.params, *bias);
                    g.conv2d(x, w, Some(b), *stride, *padding)?
                }
                LayerKind::BatchNorm { gamma, beta, stats } => {
                    let gm = g.param(&self.params, *gamma);
                    let bt = g.param(&self.params, *beta);
                    if training {
                        let (v, s) = g.batchnorm2d_train(x, gm, bt)?;
                        updates.push((*stats, s));
                        v
                    } else {
                        g.batchnorm2d_eval(x, gm, bt, &self.running[*stats].1)?
                    }
                }
                LayerKind::Relu => g.relu(x)?,
                LayerKind::MaxPool { k, stride } => g.maxpool2d(x, *k, *stride)?,
                LayerKind::Upsample { factor } => g.upsample_nearest(x, *factor)?,
                LayerKind::Concat => g.concat_channels(x, slots[layer.inputs[1]])?,
            };
            slots.push(out);
        }
        slots.remove(0);
        Ok((slots, updates))
    }

    /// The classifier's spatial logit map (N, 1, h, w), before any resize
    /// or pooling. Uses running batchnorm statistics.
    pub fn dense_logits(&self, g: &mut Graph<T>, images: Var) -> Result<Var> {
        let (outs, _) = self.run(g, images, false, self.classifier_index())?;
        Ok(*outs.last().expect("model has layers"))
    }

    /// Training-mode variant of [`dense_logits`](Self::dense_logits);
    /// batchnorm layers normalize with batch statistics and update the
    /// running estimates.
    pub fn dense_logits_train(&mut self, g: &mut Graph<T>, images: Var) -> Result<Var> {
        let (outs, updates) = self.run(g, images, true, self.classifier_index())?;
        for (slot, stats) in updates {
            self.running[slot].1.update(&stats);
        }
        Ok(*outs.last().expect("model has layers"))
    }

    /// Output of a named layer in evaluation mode.
    pub fn layer_output(&self, g: &mut Graph<T>, images: Var, layer: &str) -> Result<Var> {
        let idx = self.layer_index(layer).ok_or_else(|| Error::arg(format!("unknown layer {layer:?} in {}", self.arch.arch)))?;
        let (outs, _) = self.run(g, images, false, idx)?;
        Ok(outs[idx])
    }

    /// Dense logits at input resolution (nearest-neighbour resize of the
    /// classifier map; a no-op for UNets).
    pub fn forward_seg(&self, g: &mut Graph<T>, images: Var) -> Result<Var> {
        let dense = self.dense_logits(g, images)?;
        to_input_resolution(g, dense, g.shape(images))
    }

    pub fn forward_seg_train(&mut self, g: &mut Graph<T>, images: Var) -> Result<Var> {
        let dense = self.dense_logits_train(g, images)?;
        to_input_resolution(g, dense, g.shape(images))
    }

    /// Image-level logit (N, 1, 1, 1): the average of the dense logit map.
    pub fn forward_cls(&self, g: &mut Graph<T>, images: Var) -> Result<Var> {
        let dense = self.dense_logits(g, images)?;
        g.global_avgpool(dense)
    }

    pub fn forward_cls_train(&mut self, g: &mut Graph<T>, images: Var) -> Result<Var> {
        let dense = self.dense_logits_train(g, images)?;
        g.global_avgpool(dense)
    }

    /// Tensor-in/tensor-out evaluation helpers.
    pub fn predict_dense(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.input(images.clone());
        let v = self.dense_logits(&mut g, x)?;
        Ok(g.value(v).clone())
    }

    pub fn predict_seg(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.input(images.clone());
        let v = self.forward_seg(&mut g, x)?;
        Ok(g.value(v).clone())
    }

    pub fn predict_cls(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.input(images.clone());
        let v = self.forward_cls(&mut g, x)?;
        Ok(g.value(v).clone())
    }

    /// Same architecture and weights in another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            arch: self.arch,
            layers: self.layers.clone(),
            params: self.params.cast(),
            running: self.running.iter().map(|(n, r)| (n.clone(), r.cast())).collect(),
        }
    }

    /// True when every parameter and running statistic is bit-identical.
    pub fn same_weights(&self, other: &Model<T>) -> bool {
        self.arch == other.arch
            && self.params.len() == other.params.len()
            && self.params.iter().zip(other.params.iter()).all(|(a, b)| a.name == b.name && bit_eq(a.value.data(), b.value.data()))
            && self.running.len() == other.running.len()
            && self
                .running
                .iter()
                .zip(&other.running)
                .all(|(a, b)| a.0 == b.0 && bit_eq(&a.1.mean, &b.1.mean) && bit_eq(&a.1.var, &b.1.var))
    }
}

fn bit_eq<T: Real>(a: &[T], b: &[T]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.f64().to_bits() == y.f64().to_bits())
}

fn to_input_resolution<T: Real>(g: &mut Graph<T>, dense: Var, input: Shape) -> Result<Var> {
    let s = g.shape(dense);
    if s.h() == input.h() && s.w() == input.w() {
        Ok(dense)
    } else {
        g.resize_nearest(dense, input.h(), input.w())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(arch: ArchId, width: f64) -> Model<f32> {
        Model::build(ArchSpec::new(arch, Task::Seg).with_width(width), 7).unwrap()
    }

    #[test]
    fn parse_arch_names() {
        assert_eq!("fn3".parse::<ArchId>().unwrap(), ArchId::Fn3);
        assert_eq!("UNet4x".parse::<ArchId>().unwrap(), ArchId::Unet4x);
        assert_eq!("meso-lite".parse::<ArchId>().unwrap(), ArchId::MesoLite);
        assert_eq!("VGG7".parse::<ArchId>().unwrap(), ArchId::Vgg8);
        assert!("xception".parse::<ArchId>().is_err());
    }

    #[test]
    fn fn3_shapes() {
        let m = build(ArchId::Fn3, 1.0);
        let x = Tensor::zeros(Shape::new(1, 3, 64, 64));
        assert_eq!(m.predict_dense(&x).unwrap().shape(), Shape::new(1, 1, 16, 16));
        assert_eq!(m.predict_seg(&x).unwrap().shape(), Shape::new(1, 1, 64, 64));
        assert_eq!(m.predict_cls(&x).unwrap().shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(m.total_stride(), 4);
    }

    #[test]
    fn strides_per_arch() {
        let expect = [
            (ArchId::Fn3, 4),
            (ArchId::Vgg3, 1),
            (ArchId::Vgg5, 2),
            (ArchId::Vgg8, 4),
            (ArchId::Unet4x, 1),
            (ArchId::Unet8x, 1),
            (ArchId::MesoLite, 8),
        ];
        for (a, s) in expect {
            assert_eq!(build(a, 0.25).total_stride(), s, "{a}");
        }
    }

    #[test]
    fn unet_keeps_resolution_and_checks_divisibility() {
        let m = build(ArchId::Unet8x, 0.25);
        let x = Tensor::zeros(Shape::new(2, 3, 32, 32));
        assert_eq!(m.predict_dense(&x).unwrap().shape(), Shape::new(2, 1, 32, 32));
        let bad = Tensor::zeros(Shape::new(1, 3, 36, 36));
        assert!(matches!(m.predict_dense(&bad), Err(Error::Dimension(_))));
    }

    #[test]
    fn wrong_channels_rejected() {
        let m = build(ArchId::Fn3, 0.25);
        let x = Tensor::zeros(Shape::new(1, 1, 16, 16));
        assert!(matches!(m.predict_cls(&x), Err(Error::Dimension(_))));
    }

    #[test]
    fn same_seed_same_weights() {
        for a in ArchId::ALL {
            let m1 = build(a, 0.25);
            let m2 = build(a, 0.25);
            assert!(m1.same_weights(&m2));
            let m3 = Model::<f32>::build(ArchSpec::new(a, Task::Seg), 8).unwrap();
            assert!(!m1.same_weights(&m3));
        }
    }

    #[test]
    fn fn3_is_smallest_at_full_width() {
        let fn3 = build(ArchId::Fn3, 1.0).params().numel();
        for a in ArchId::ALL.into_iter().filter(|&a| a != ArchId::Fn3) {
            assert!(build(a, 1.0).params().numel() > fn3, "{a}");
        }
    }
}
