//! Reverse-mode gradient tape over the taped op set.
//!
//! A [`GradTape`] owns every value produced during one forward pass. Ops
//! return [`Var`] handles; [`GradTape::backward`] walks the record in
//! reverse from a scalar loss.

use std::collections::BTreeMap;

use super::{ops, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`GradTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        stride: usize,
        padding: usize,
    },
    AddBias(Var, Var),
    Relu(Var),
    Bilinear(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
    },
    Softmax(Var),
    Concat(Var, Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    /// True when this node is, or depends on, a `requires_grad` leaf.
    tracked: bool,
}

/// Single-owner record of one differentiable computation.
#[derive(Debug, Default)]
pub struct GradTape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every `requires_grad` leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: BTreeMap<Var, Tensor>,
}

impl Gradients {
    /// Gradient for `var`; `None` when `var` is not a `requires_grad` leaf.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(&var)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.grads.iter().map(|(&v, t)| (v, t))
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Records an input. It receives a gradient iff `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let tracked = value.requires_grad();
        self.push(value, Op::Leaf, tracked)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value.with_grad(false), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor, op: Op) -> Var {
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(value, op, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.binary(a, b, v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.binary(a, b, v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.binary(a, b, v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a).map(|x| x * factor);
        let tracked = self.tracked(a);
        self.push(v, Op::Scale(a, factor), tracked)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.binary(a, b, v, Op::MatMul(a, b)))
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let v = ops::conv2d(self.value(input), self.value(kernel), stride, padding)?;
        Ok(self.binary(
            input,
            kernel,
            v,
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            },
        ))
    }

    /// Adds a bias vector along the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let v = ops::add_bias(self.value(x), self.value(bias))?;
        Ok(self.binary(x, bias, v, Op::AddBias(x, bias)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = ops::relu(self.value(x));
        let tracked = self.tracked(x);
        self.push(v, Op::Relu(x), tracked)
    }

    pub fn bilinear_upsample(&mut self, x: Var, scale: usize) -> Result<Var> {
        let v = ops::bilinear_upsample(self.value(x), scale)?;
        let tracked = self.tracked(x);
        Ok(self.push(v, Op::Bilinear(x, scale), tracked))
    }

    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let v = ops::layernorm(self.value(x), self.value(gain), self.value(bias))?;
        let tracked = self.tracked(x) || self.tracked(gain) || self.tracked(bias);
        Ok(self.push(v, Op::LayerNorm { x, gain, bias }, tracked))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let v = ops::softmax_rows(self.value(x))?;
        let tracked = self.tracked(x);
        Ok(self.push(v, Op::Softmax(x), tracked))
    }

    /// Channel (last-axis) concatenation, `a` first.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::concat_last(self.value(a), self.value(b))?;
        Ok(self.binary(a, b, v, Op::Concat(a, b)))
    }

    /// Row-major view with a new shape.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        let tracked = self.tracked(x);
        Ok(self.push(v, Op::Reshape(x), tracked))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        let tracked = self.tracked(x);
        self.push(v, Op::Sum(x), tracked)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).mean());
        let tracked = self.tracked(x);
        self.push(v, Op::Mean(x), tracked)
    }

    /// Mean squared error between `pred` and `target`.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let diff = self.sub(pred, target)?;
        let sq = self.mul(diff, diff)?;
        Ok(self.mean(sq))
    }

    /// Propagates `d loss / d node` back to every `requires_grad` leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        adj.resize_with(self.nodes.len(), || None);
        adj[loss.0] = Some(Tensor::full(loss_value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = adj[idx].take() else {
                continue;
            };
            if matches!(node.op, Op::Leaf) {
                adj[idx] = Some(g);
                continue;
            }
            for (target, contribution) in self.local_grads(&node.op, &node.value, &g) {
                if !self.tracked(target) {
                    continue;
                }
                match &mut adj[target.0] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contribution.data()) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contribution),
                }
            }
        }

        let grads = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Leaf) && n.value.requires_grad())
            .map(|(i, n)| {
                let g = adj[i]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(n.value.shape()));
                (Var(i), g)
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn local_grads(&self, op: &Op, out: &Tensor, g: &Tensor) -> Vec<(Var, Tensor)> {
        match *op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
            Op::Sub(a, b) => vec![(a, g.clone()), (b, g.map(|v| -v))],
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let ga = g.zip_map(vb, "mul", |x, y| x * y).expect("shapes fixed");
                let gb = g.zip_map(va, "mul", |x, y| x * y).expect("shapes fixed");
                vec![(a, ga), (b, gb)]
            }
            Op::Scale(a, f) => vec![(a, g.map(|v| v * f))],
            Op::MatMul(a, b) => {
                let (ga, gb) = ops::matmul_backward(self.value(a), self.value(b), g);
                vec![(a, ga), (b, gb)]
            }
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            } => {
                let (gi, gk) =
                    ops::conv2d_backward(self.value(input), self.value(kernel), stride, padding, g);
                vec![(input, gi), (kernel, gk)]
            }
            Op::AddBias(x, bias) => vec![(x, g.clone()), (bias, ops::sum_to_last(g))],
            Op::Relu(x) => {
                let gx = self
                    .value(x)
                    .zip_map(g, "relu", |v, gv| if v > 0.0 { gv } else { 0.0 })
                    .expect("shapes fixed");
                vec![(x, gx)]
            }
            Op::Bilinear(x, s) => vec![(
                x,
                ops::bilinear_upsample_backward(self.value(x).shape(), s, g),
            )],
            Op::LayerNorm { x, gain, bias } => {
                let (gx, gg, gb) = ops::layernorm_backward(self.value(x), self.value(gain), g);
                vec![(x, gx), (gain, gg), (bias, gb)]
            }
            Op::Softmax(x) => vec![(x, ops::softmax_rows_backward(out, g))],
            Op::Concat(a, b) => {
                let (ga, gb) =
                    ops::concat_last_backward(self.value(a).shape(), self.value(b).shape(), g);
                vec![(a, ga), (b, gb)]
            }
            Op::Reshape(x) => vec![(x, g.reshape(self.value(x).shape()).expect("same length"))],
            Op::Sum(x) => vec![(x, Tensor::full(self.value(x).shape(), g.item()))],
            Op::Mean(x) => {
                let n = self.value(x).len() as f64;
                vec![(x, Tensor::full(self.value(x).shape(), g.item() / n))]
            }
        }
    }
}
