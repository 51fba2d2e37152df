//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so walking them backwards is a valid topological order.
//! Parameters enter the graph as copies of their [`ParamStore`] values;
//! after [`Graph::backward`] the gradients are accumulated back into the
//! store with [`Graph::accumulate_param_grads`].

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::kernels::{self, BatchStats};
use crate::param::{ParamId, ParamStore, RunningStats};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Environment variable enabling a finiteness check after every op.
pub const NAN_CHECK_ENV: &str = "FORGELOC_CHECK_NAN";

fn nan_check_enabled() -> bool {
    static FLAG: OnceLock<bool> = OnceLock::new();
    *FLAG.get_or_init(|| std::env::var(NAN_CHECK_ENV).map(|v| !v.is_empty() && v != "0").unwrap_or(false))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T: Real> {
    Leaf,
    Param(ParamId),
    Conv { x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize },
    MaxPool { x: Var, argmax: Vec<usize> },
    AvgPool { x: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor<T>, inv_std: Vec<T>, training: bool },
    Relu { x: Var },
    Sigmoid { x: Var },
    Resize { x: Var },
    Concat { a: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Sum { x: Var },
    Mean { x: Var },
    Bce { logits: Var, targets: Vec<T> },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node gradients returned by [`Graph::backward`].
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Result<Var> {
        if nan_check_enabled() && !value.all_finite() {
            return Err(Error::Numeric(format!("non-finite value produced by op #{} with shape {}", self.nodes.len(), value.shape())));
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant input; no gradient is computed for it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// An input whose gradient is wanted (finite-difference checks, input
    /// optimization).
    pub fn input_with_grad(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.nodes.push(Node { value: store.get(id).value.clone(), op: Op::Param(id), needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let out = kernels::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, padding)?;
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(out, Op::Conv { x, w, b, stride, padding }, needs)
    }

    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let (out, argmax) = kernels::maxpool2d(self.value(x), k, stride)?;
        let needs = self.needs(x);
        self.push(out, Op::MaxPool { x, argmax }, needs)
    }

    pub fn global_avgpool(&mut self, x: Var) -> Result<Var> {
        let out = kernels::global_avgpool(self.value(x))?;
        let needs = self.needs(x);
        self.push(out, Op::AvgPool { x }, needs)
    }

    /// Batch normalization; in training mode `running` is updated from the
    /// batch statistics, otherwise it supplies the normalization.
    pub fn batchnorm2d(&mut self, x: Var, gamma: Var, beta: Var, running: &mut RunningStats<T>, training: bool) -> Result<Var> {
        if training {
            let (v, stats) = self.batchnorm2d_train(x, gamma, beta)?;
            running.update(&stats);
            Ok(v)
        } else {
            self.batchnorm2d_eval(x, gamma, beta, running)
        }
    }

    /// Training-mode batchnorm returning the batch statistics instead of
    /// applying them to running stats.
    pub fn batchnorm2d_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats)> {
        let f = kernels::batchnorm2d_train(self.value(x), self.value(gamma), self.value(beta))?;
        let stats = f.stats.expect("training mode yields stats");
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let v = self.push(f.output, Op::BatchNorm { x, gamma, beta, xhat: f.xhat, inv_std: f.inv_std, training: true }, needs)?;
        Ok((v, stats))
    }

    pub fn batchnorm2d_eval(&mut self, x: Var, gamma: Var, beta: Var, running: &RunningStats<T>) -> Result<Var> {
        let f = kernels::batchnorm2d_eval(self.value(x), self.value(gamma), self.value(beta), &running.mean, &running.var)?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(f.output, Op::BatchNorm { x, gamma, beta, xhat: f.xhat, inv_std: f.inv_std, training: false }, needs)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = kernels::relu(self.value(x));
        let needs = self.needs(x);
        self.push(out, Op::Relu { x }, needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = kernels::sigmoid(self.value(x));
        let needs = self.needs(x);
        self.push(out, Op::Sigmoid { x }, needs)
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor < 1 {
            return Err(Error::arg("upsample_nearest: factor must be >= 1"));
        }
        let s = self.shape(x);
        self.resize_nearest(x, s.h() * factor, s.w() * factor)
    }

    pub fn resize_nearest(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let out = kernels::resize_nearest(self.value(x), h, w)?;
        let needs = self.needs(x);
        self.push(out, Op::Resize { x }, needs)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::concat_channels(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::Concat { a, b }, needs)
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!("{op}: shapes {} and {} differ", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o += v;
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::Add { a, b }, needs)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= v;
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::Mul { a, b }, needs)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        let needs = self.needs(x);
        self.push(out, Op::Sum { x }, needs)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        if self.value(x).is_empty() {
            return Err(Error::dim("mean of an empty tensor"));
        }
        let out = Tensor::scalar(self.value(x).mean());
        let needs = self.needs(x);
        self.push(out, Op::Mean { x }, needs)
    }

    /// Mean binary cross-entropy between `logits` and same-length targets
    /// in [0, 1]; evaluated in logit space.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Vec<T>) -> Result<Var> {
        let z = self.value(logits);
        if z.len() != targets.len() {
            return Err(Error::dim(format!("bce: {} logits ({}) vs {} targets", z.len(), z.shape(), targets.len())));
        }
        if z.is_empty() {
            return Err(Error::dim("bce: no logits"));
        }
        let loss = kernels::bce_with_logits(z.data(), &targets);
        let needs = self.needs(logits);
        self.push(Tensor::scalar(T::of(loss)), Op::Bce { logits, targets }, needs)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ls = self.shape(loss);
        if !ls.is_scalar() {
            return Err(Error::arg(format!("backward needs a scalar loss, got shape {ls}")));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &dy, &mut grads)?;
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut send = |v: Var, g: Tensor<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => {
                    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv { x, w, b, stride, padding } => {
                let g = kernels::conv2d_backward(self.value(*x), self.value(*w), *stride, *padding, dy)?;
                send(*x, g.input);
                send(*w, g.weight);
                if let Some(b) = b {
                    send(*b, g.bias.reshape(self.shape(*b))?);
                }
            }
            Op::MaxPool { x, argmax } => {
                send(*x, kernels::maxpool2d_backward(self.shape(*x), argmax, dy));
            }
            Op::AvgPool { x } => send(*x, kernels::global_avgpool_backward(self.shape(*x), dy)),
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, training } => {
                let g = kernels::batchnorm2d_backward(xhat, inv_std, self.value(*gamma), *training, dy);
                send(*x, g.input);
                send(*gamma, g.gamma.reshape(self.shape(*gamma))?);
                send(*beta, g.beta.reshape(self.shape(*beta))?);
            }
            Op::Relu { x } => send(*x, kernels::relu_backward(self.value(*x), dy)),
            Op::Sigmoid { x } => send(*x, kernels::sigmoid_backward(&node.value, dy)),
            Op::Resize { x } => send(*x, kernels::resize_nearest_backward(self.shape(*x), dy)),
            Op::Concat { a, b } => {
                let (da, db) = kernels::split_channels(dy, self.shape(*a).c());
                send(*a, da);
                send(*b, db);
            }
            Op::Add { a, b } => {
                send(*a, dy.clone());
                send(*b, dy.clone());
            }
            Op::Mul { a, b } => {
                let mut da = dy.clone();
                for (d, &v) in da.data_mut().iter_mut().zip(self.value(*b).data()) {
                    *d *= v;
                }
                let mut db = dy.clone();
                for (d, &v) in db.data_mut().iter_mut().zip(self.value(*a).data()) {
                    *d *= v;
                }
                send(*a, da);
                send(*b, db);
            }
            Op::Sum { x } => {
                let g = dy.data()[0];
                send(*x, Tensor::full(self.shape(*x), g));
            }
            Op::Mean { x } => {
                let s = self.shape(*x);
                let g = dy.data()[0] / T::of(s.numel() as f64);
                send(*x, Tensor::full(s, g));
            }
            Op::Bce { logits, targets } => {
                let z = self.value(*logits);
                let scale = dy.data()[0] / T::of(z.len() as f64);
                let mut dz = z.clone();
                for (d, &t) in dz.data_mut().iter_mut().zip(targets) {
                    *d = (kernels::stable_sigmoid(*d) - t) * scale;
                }
                send(*logits, dz);
            }
        }
        Ok(())
    }

    /// Add parameter gradients from `grads` into `store`.
    pub fn accumulate_param_grads(&self, grads: &Gradients<T>, store: &mut ParamStore<T>) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                if let Some(g) = &grads.grads[i] {
                    store.get_mut(id).accumulate_grad(g)?;
                }
            }
        }
        Ok(())
    }

    /// [`backward`](Self::backward) followed by accumulation into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let grads = self.backward(loss)?;
        self.accumulate_param_grads(&grads, store)?;
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_loss_gradient_is_input() {
        let mut store = ParamStore::<f64>::new();
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![1.5, -2.0, 4.0]).unwrap();
        let wid = store.add("w", Tensor::full(x.shape(), 0.3)).unwrap();
        let mut g = Graph::new();
        let w = g.param(&store, wid);
        let xv = g.input(x.clone());
        let p = g.mul(w, xv).unwrap();
        let loss = g.sum(p).unwrap();
        g.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.get(wid).grad.as_ref().unwrap(), &x);
    }

    #[test]
    fn fan_out_sums_path_gradients() {
        let mut g = Graph::<f64>::new();
        let x = g.input_with_grad(Tensor::scalar(3.0));
        // loss = x*x + x  => d/dx = 2x + 1 = 7
        let sq = g.mul(x, x).unwrap();
        let loss = g.add(sq, x).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[7.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.input_with_grad(Tensor::zeros(Shape::new(1, 1, 2, 2)));
        assert!(matches!(g.backward(x), Err(Error::Argument(_))));
    }

    #[test]
    fn concat_backward_splits_exactly() {
        let mut g = Graph::<f32>::new();
        let a = g.input_with_grad(Tensor::zeros(Shape::new(2, 2, 3, 3)));
        let b = g.input_with_grad(Tensor::zeros(Shape::new(2, 3, 3, 3)));
        let c = g.concat_channels(a, b).unwrap();
        let up = Tensor::from_fn(Shape::new(2, 5, 3, 3), |[n, c, h, w]| {
            (n as f32 * 0.37 + c as f32 * 1.3 - h as f32 * 0.11 + w as f32 * 7.9).sin()
        });
        let upv = g.input(up.clone());
        let prod = g.mul(c, upv).unwrap();
        let loss = g.sum(prod).unwrap();
        let grads = g.backward(loss).unwrap();
        let joined = kernels::concat_channels(grads.get(a).unwrap(), grads.get(b).unwrap()).unwrap();
        assert_eq!(joined, up);
    }
}
