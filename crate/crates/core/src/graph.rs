//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! Every operation appends a node holding its forward value, so inputs always
//! precede their consumers and the tape order is a valid topological order.
//! [`Graph::backward`] walks the tape once in reverse and leaves gradients in
//! the grad slot of every node that depends on a `requires_grad` leaf.

use alloc::vec;
use alloc::vec::Vec;

use crate::attention::{self, FeatureMap};
use crate::error::{invalid, shape_err, Error, Result};
use crate::ops::{self, Conv1dGeometry};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        geo: Conv1dGeometry,
    },
    MaxPool1d {
        input: NodeId,
        argmax: Vec<usize>,
    },
    Relu {
        input: NodeId,
    },
    Dense {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Reshape {
        input: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Sum {
        input: NodeId,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    CompatDot {
        local: NodeId,
        global: NodeId,
    },
    CompatPc {
        local: NodeId,
        global: NodeId,
        u: NodeId,
    },
    Softmax {
        input: NodeId,
    },
    Tanh {
        input: NodeId,
    },
    AttendPool {
        local: NodeId,
        weights: NodeId,
    },
    Concat {
        inputs: Vec<NodeId>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Conv1d {
                input,
                weight,
                bias,
                ..
            }
            | Op::Dense {
                input,
                weight,
                bias,
            } => vec![*input, *weight, *bias],
            Op::MaxPool1d { input, .. }
            | Op::Relu { input }
            | Op::Reshape { input }
            | Op::Sum { input }
            | Op::Softmax { input }
            | Op::Tanh { input } => vec![*input],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
            Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::CompatDot { local, global } => vec![*local, *global],
            Op::CompatPc { local, global, u } => vec![*local, *global, *u],
            Op::AttendPool { local, weights } => vec![*local, *weights],
            Op::Concat { inputs } => inputs.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A tape of tensor operations supporting one backward pass per reset.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backpropagated: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, id: NodeId) -> Result<usize> {
        if id.0 < self.nodes.len() {
            Ok(id.0)
        } else {
            Err(Error::MissingNode(id.0))
        }
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        Ok(&self.nodes[self.check(id)?].value)
    }

    /// Gradient left by the last backward pass, if the node received one.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes.get(id.0).and_then(|n| n.value.grad())
    }

    pub fn take_grad(&mut self, id: NodeId) -> Option<Vec<f64>> {
        self.nodes.get_mut(id.0).and_then(|n| n.value.take_grad())
    }

    /// Clears gradients so `backward` may run again.
    pub fn reset(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
        self.backpropagated = false;
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<NodeId> {
        value.check_finite(op_name)?;
        let mut needs_grad = false;
        for input in op.inputs() {
            needs_grad |= self.nodes[self.check(input)?].needs_grad;
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Records a leaf. It receives a gradient iff `requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Result<NodeId> {
        tensor.check_finite("leaf")?;
        let needs_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            needs_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, mut tensor: Tensor) -> Result<NodeId> {
        tensor.set_requires_grad(false);
        self.leaf(tensor)
    }

    /// `input [B, C_in, L]`, `weight [C_out, C_in, K]`, `bias [C_out]`.
    pub fn conv1d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let x = self.value(input)?;
        let w = self.value(weight)?;
        let b = self.value(bias)?;
        x.expect_rank("conv1d input", 3)?;
        w.expect_rank("conv1d weight", 3)?;
        if x.dim(1) != w.dim(1) {
            return shape_err("conv1d", "input channels", w.dim(1), x.dim(1));
        }
        if b.len() != w.dim(0) {
            return shape_err("conv1d", "bias length", w.dim(0), b.len());
        }
        let geo = Conv1dGeometry {
            batch: x.dim(0),
            in_channels: x.dim(1),
            out_channels: w.dim(0),
            len: x.dim(2),
            kernel: w.dim(2),
            stride,
            padding,
        };
        geo.validate()?;
        let out = ops::conv1d_forward(&geo, x.data(), w.data(), b.data())?;
        let value = Tensor::new(&[geo.batch, geo.out_channels, geo.out_len()], out)?;
        self.push(
            "conv1d",
            value,
            Op::Conv1d {
                input,
                weight,
                bias,
                geo,
            },
        )
    }

    pub fn maxpool1d(&mut self, input: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        let x = self.value(input)?;
        if x.rank() < 2 {
            return shape_err("maxpool1d", "rank", 3, x.rank());
        }
        let len = x.dim(x.rank() - 1);
        let rows = x.len() / len;
        let (out, argmax) = ops::maxpool1d_forward(x.data(), rows, len, window, stride)?;
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = out.len() / rows;
        let value = Tensor::new(&shape, out)?;
        self.push("maxpool1d", value, Op::MaxPool1d { input, argmax })
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input)?;
        let out = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let value = Tensor::new(x.shape(), out)?;
        self.push("relu", value, Op::Relu { input })
    }

    pub fn tanh(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input)?;
        let value = Tensor::new(x.shape(), attention::normalize_tanh(x.data()))?;
        self.push("tanh", value, Op::Tanh { input })
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input)?;
        let n = x.dim(x.rank() - 1);
        let mut out = Vec::with_capacity(x.len());
        for row in x.data().chunks_exact(n) {
            out.extend(attention::normalize_softmax(row)?);
        }
        let value = Tensor::new(x.shape(), out)?;
        self.push("softmax", value, Op::Softmax { input })
    }

    /// `input [B, N]`, `weight [M, N]`, `bias [M]` to `[B, M]`.
    pub fn dense(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let x = self.value(input)?;
        let w = self.value(weight)?;
        let b = self.value(bias)?;
        x.expect_rank("dense input", 2)?;
        w.expect_rank("dense weight", 2)?;
        let (batch, n) = (x.dim(0), x.dim(1));
        let m = w.dim(0);
        if w.dim(1) != n {
            return shape_err("dense", "input features", w.dim(1), n);
        }
        let out = ops::dense_forward(x.data(), batch, w.data(), b.data(), m, n)?;
        let value = Tensor::new(&[batch, m], out)?;
        self.push(
            "dense",
            value,
            Op::Dense {
                input,
                weight,
                bias,
            },
        )
    }

    /// Collapses every axis after the first.
    pub fn flatten(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input)?;
        let batch = x.dim(0);
        let value = x.clone().reshape(&[batch, x.len() / batch])?;
        self.push("flatten", without_grad(value), Op::Reshape { input })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (x, y) = (self.value(a)?, self.value(b)?);
        if x.shape() != y.shape() {
            return shape_err("add", "element count", x.len(), y.len());
        }
        let out = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Tensor::new(x.shape(), out)?;
        self.push("add", value, Op::Add { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (x, y) = (self.value(a)?, self.value(b)?);
        if x.shape() != y.shape() {
            return shape_err("mul", "element count", x.len(), y.len());
        }
        let out = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::new(x.shape(), out)?;
        self.push("mul", value, Op::Mul { a, b })
    }

    pub fn sum(&mut self, input: NodeId) -> Result<NodeId> {
        let total = self.value(input)?.data().iter().sum();
        self.push("sum", Tensor::scalar(total), Op::Sum { input })
    }

    /// Mean cross-entropy of `logits [B, K]` against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let z = self.value(logits)?;
        z.expect_rank("softmax_cross_entropy", 2)?;
        let (loss, probs) =
            ops::softmax_cross_entropy(z.data(), z.dim(0), z.dim(1), labels)?;
        self.push(
            "softmax_cross_entropy",
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    fn attention_dims(&self, op: &'static str, local: NodeId, global: NodeId) -> Result<(usize, usize, usize)> {
        let l = self.value(local)?;
        let g = self.value(global)?;
        l.expect_rank(op, 3)?;
        g.expect_rank(op, 2)?;
        if g.dim(0) != l.dim(0) {
            return shape_err(op, "batch", l.dim(0), g.dim(0));
        }
        if g.dim(1) != l.dim(1) {
            return shape_err(op, "global length", l.dim(1), g.dim(1));
        }
        Ok((l.dim(0), l.dim(1), l.dim(2)))
    }

    /// `local [B, C, n]`, `global [B, C]` to scores `[B, n]`.
    pub fn compat_dot(&mut self, local: NodeId, global: NodeId) -> Result<NodeId> {
        let (batch, c, n) = self.attention_dims("compat_dot", local, global)?;
        let (l, g) = (self.value(local)?, self.value(global)?);
        let mut out = Vec::with_capacity(batch * n);
        for b in 0..batch {
            let fm = FeatureMap::new(&l.data()[b * c * n..(b + 1) * c * n], c, n)?;
            out.extend(attention::compat_dot(&fm, &g.data()[b * c..(b + 1) * c])?);
        }
        let value = Tensor::new(&[batch, n], out)?;
        self.push("compat_dot", value, Op::CompatDot { local, global })
    }

    /// Parametrized compatibility with `u [C]`.
    pub fn compat_pc(&mut self, local: NodeId, global: NodeId, u: NodeId) -> Result<NodeId> {
        let (batch, c, n) = self.attention_dims("compat_pc", local, global)?;
        let (l, g, w) = (self.value(local)?, self.value(global)?, self.value(u)?);
        if w.len() != c {
            return shape_err("compat_pc", "u length", c, w.len());
        }
        let mut out = Vec::with_capacity(batch * n);
        for b in 0..batch {
            let fm = FeatureMap::new(&l.data()[b * c * n..(b + 1) * c * n], c, n)?;
            out.extend(attention::compat_pc(&fm, &g.data()[b * c..(b + 1) * c], w.data())?);
        }
        let value = Tensor::new(&[batch, n], out)?;
        self.push("compat_pc", value, Op::CompatPc { local, global, u })
    }

    /// `local [B, C, n]`, `weights [B, n]` to pooled `[B, C]`.
    pub fn attend_pool(&mut self, local: NodeId, weights: NodeId) -> Result<NodeId> {
        let l = self.value(local)?;
        let a = self.value(weights)?;
        l.expect_rank("attend_pool", 3)?;
        a.expect_rank("attend_pool", 2)?;
        let (batch, c, n) = (l.dim(0), l.dim(1), l.dim(2));
        if a.dim(0) != batch || a.dim(1) != n {
            return shape_err("attend_pool", "weights", batch * n, a.len());
        }
        let mut out = Vec::with_capacity(batch * c);
        for b in 0..batch {
            let fm = FeatureMap::new(&l.data()[b * c * n..(b + 1) * c * n], c, n)?;
            out.extend(attention::attend_pool(&fm, &a.data()[b * n..(b + 1) * n])?);
        }
        let value = Tensor::new(&[batch, c], out)?;
        self.push("attend_pool", value, Op::AttendPool { local, weights })
    }

    /// Concatenates `[B, d_i]` tensors along the feature axis.
    pub fn concat(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            return invalid("concat", "no inputs");
        }
        let batch = self.value(inputs[0])?.dim(0);
        let mut widths = Vec::with_capacity(inputs.len());
        for &id in inputs {
            let t = self.value(id)?;
            t.expect_rank("concat", 2)?;
            if t.dim(0) != batch {
                return shape_err("concat", "batch", batch, t.dim(0));
            }
            widths.push(t.dim(1));
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(batch * total);
        for b in 0..batch {
            for (&id, &w) in inputs.iter().zip(&widths) {
                out.extend_from_slice(&self.nodes[id.0].value.data()[b * w..(b + 1) * w]);
            }
        }
        let value = Tensor::new(&[batch, total], out)?;
        self.push(
            "concat",
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
        )
    }

    /// Back-propagates from a scalar node. A second call without
    /// [`Graph::reset`] is an error.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backpropagated {
            return Err(Error::AlreadyBackpropagated);
        }
        let last = self.check(loss)?;
        let n = self.nodes[last].value.len();
        if n != 1 {
            return Err(Error::NotScalar(n));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=last).map(|_| None).collect();
        grads[last] = Some(vec![1.0]);
        for i in (0..=last).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: "backward" });
            }
            self.propagate(i, &g, &mut grads)?;
            self.nodes[i].value.set_grad(g)?;
        }
        self.backpropagated = true;
        Ok(())
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Vec<f64>>],
        node: usize,
        target: NodeId,
        contribution: impl FnOnce() -> Vec<f64>,
    ) -> Result<()> {
        if target.0 >= node {
            return Err(Error::Cycle {
                node,
                input: target.0,
            });
        }
        if !self.nodes[target.0].needs_grad {
            return Ok(());
        }
        let c = contribution();
        match &mut grads[target.0] {
            Some(existing) => {
                for (e, v) in existing.iter_mut().zip(&c) {
                    *e += v;
                }
            }
            slot @ None => *slot = Some(c),
        }
        Ok(())
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes.get(id.0).is_some_and(|n| n.needs_grad)
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let val = |id: NodeId| -> &Tensor { &self.nodes[id.0].value };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv1d {
                input,
                weight,
                bias,
                geo,
            } => {
                let cg = ops::conv1d_backward(
                    geo,
                    val(*input).data(),
                    val(*weight).data(),
                    g,
                    self.needs(*input),
                )?;
                if let Some(gx) = cg.input {
                    self.accumulate(grads, i, *input, || gx)?;
                }
                self.accumulate(grads, i, *weight, || cg.weight)?;
                self.accumulate(grads, i, *bias, || cg.bias)?;
            }
            Op::MaxPool1d { input, argmax } => {
                let len = val(*input).len();
                self.accumulate(grads, i, *input, || ops::maxpool1d_backward(g, argmax, len))?;
            }
            Op::Relu { input } => {
                let x = val(*input).data();
                self.accumulate(grads, i, *input, || {
                    x.iter()
                        .zip(g)
                        .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect()
                })?;
            }
            Op::Tanh { input } => {
                let y = self.nodes[i].value.data();
                self.accumulate(grads, i, *input, || {
                    y.iter().zip(g).map(|(&yv, &gv)| gv * (1.0 - yv * yv)).collect()
                })?;
            }
            Op::Softmax { input } => {
                let y = &self.nodes[i].value;
                let n = y.dim(y.rank() - 1);
                self.accumulate(grads, i, *input, || {
                    let mut dx = vec![0.0; y.len()];
                    for ((yr, gr), dr) in y
                        .data()
                        .chunks_exact(n)
                        .zip(g.chunks_exact(n))
                        .zip(dx.chunks_exact_mut(n))
                    {
                        let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                            *d = yv * (gv - inner);
                        }
                    }
                    dx
                })?;
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let x = val(*input);
                let w = val(*weight);
                let dg = ops::dense_backward(
                    x.data(),
                    x.dim(0),
                    w.data(),
                    g,
                    w.dim(0),
                    w.dim(1),
                    self.needs(*input),
                );
                if let Some(gx) = dg.input {
                    self.accumulate(grads, i, *input, || gx)?;
                }
                self.accumulate(grads, i, *weight, || dg.weight)?;
                self.accumulate(grads, i, *bias, || dg.bias)?;
            }
            Op::Reshape { input } => {
                self.accumulate(grads, i, *input, || g.to_vec())?;
            }
            Op::Add { a, b } => {
                self.accumulate(grads, i, *a, || g.to_vec())?;
                self.accumulate(grads, i, *b, || g.to_vec())?;
            }
            Op::Mul { a, b } => {
                let (x, y) = (val(*a).data(), val(*b).data());
                self.accumulate(grads, i, *a, || y.iter().zip(g).map(|(p, q)| p * q).collect())?;
                self.accumulate(grads, i, *b, || x.iter().zip(g).map(|(p, q)| p * q).collect())?;
            }
            Op::Sum { input } => {
                let n = val(*input).len();
                self.accumulate(grads, i, *input, || vec![g[0]; n])?;
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let classes = val(*logits).dim(1);
                let scale = g[0] / labels.len() as f64;
                self.accumulate(grads, i, *logits, || {
                    let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (b, &y) in labels.iter().enumerate() {
                        d[b * classes + y] -= scale;
                    }
                    d
                })?;
            }
            Op::CompatDot { local, global } => {
                let (l, gl) = (val(*local), val(*global));
                let (batch, c, n) = (l.dim(0), l.dim(1), l.dim(2));
                self.accumulate(grads, i, *local, || {
                    let mut d = vec![0.0; l.len()];
                    for b in 0..batch {
                        for k in 0..c {
                            let gk = gl.data()[b * c + k];
                            let row = &mut d[(b * c + k) * n..(b * c + k + 1) * n];
                            for (dv, &gi) in row.iter_mut().zip(&g[b * n..(b + 1) * n]) {
                                *dv = gi * gk;
                            }
                        }
                    }
                    d
                })?;
                self.accumulate(grads, i, *global, || {
                    let mut d = vec![0.0; gl.len()];
                    for b in 0..batch {
                        let gs = &g[b * n..(b + 1) * n];
                        for k in 0..c {
                            let row = &l.data()[(b * c + k) * n..(b * c + k + 1) * n];
                            d[b * c + k] = row.iter().zip(gs).map(|(p, q)| p * q).sum();
                        }
                    }
                    d
                })?;
            }
            Op::CompatPc { local, global, u } => {
                let (l, gl, uv) = (val(*local), val(*global), val(*u).data());
                let (batch, c, n) = (l.dim(0), l.dim(1), l.dim(2));
                self.accumulate(grads, i, *local, || {
                    let mut d = vec![0.0; l.len()];
                    for b in 0..batch {
                        for (k, &uk) in uv.iter().enumerate() {
                            let row = &mut d[(b * c + k) * n..(b * c + k + 1) * n];
                            for (dv, &gi) in row.iter_mut().zip(&g[b * n..(b + 1) * n]) {
                                *dv = gi * uk;
                            }
                        }
                    }
                    d
                })?;
                self.accumulate(grads, i, *global, || {
                    let mut d = vec![0.0; gl.len()];
                    for b in 0..batch {
                        let total: f64 = g[b * n..(b + 1) * n].iter().sum();
                        for (k, &uk) in uv.iter().enumerate() {
                            d[b * c + k] = uk * total;
                        }
                    }
                    d
                })?;
                self.accumulate(grads, i, *u, || {
                    let mut d = vec![0.0; c];
                    for b in 0..batch {
                        let gs = &g[b * n..(b + 1) * n];
                        let total: f64 = gs.iter().sum();
                        for (k, dk) in d.iter_mut().enumerate() {
                            let row = &l.data()[(b * c + k) * n..(b * c + k + 1) * n];
                            let local_part: f64 = row.iter().zip(gs).map(|(p, q)| p * q).sum();
                            *dk += local_part + gl.data()[b * c + k] * total;
                        }
                    }
                    d
                })?;
            }
            Op::AttendPool { local, weights } => {
                let (l, a) = (val(*local), val(*weights));
                let (batch, c, n) = (l.dim(0), l.dim(1), l.dim(2));
                self.accumulate(grads, i, *local, || {
                    let mut d = vec![0.0; l.len()];
                    for b in 0..batch {
                        let ab = &a.data()[b * n..(b + 1) * n];
                        for k in 0..c {
                            let gk = g[b * c + k];
                            let row = &mut d[(b * c + k) * n..(b * c + k + 1) * n];
                            for (dv, &ai) in row.iter_mut().zip(ab) {
                                *dv = ai * gk;
                            }
                        }
                    }
                    d
                })?;
                self.accumulate(grads, i, *weights, || {
                    let mut d = vec![0.0; a.len()];
                    for b in 0..batch {
                        let db = &mut d[b * n..(b + 1) * n];
                        for k in 0..c {
                            let gk = g[b * c + k];
                            let row = &l.data()[(b * c + k) * n..(b * c + k + 1) * n];
                            for (dv, &lv) in db.iter_mut().zip(row) {
                                *dv += gk * lv;
                            }
                        }
                    }
                    d
                })?;
            }
            Op::Concat { inputs } => {
                let widths: Vec<usize> = inputs.iter().map(|&id| val(id).dim(1)).collect();
                let total: usize = widths.iter().sum();
                let batch = g.len() / total;
                let mut offset = 0;
                for (&id, &w) in inputs.iter().zip(&widths) {
                    self.accumulate(grads, i, id, || {
                        let mut d = Vec::with_capacity(batch * w);
                        for b in 0..batch {
                            d.extend_from_slice(&g[b * total + offset..b * total + offset + w]);
                        }
                        d
                    })?;
                    offset += w;
                }
            }
        }
        Ok(())
    }

    /// Hash of every piecewise-linear branch decision on the tape (ReLU
    /// signs, pooling argmax). Two evaluations with equal signatures lie on
    /// the same smooth piece of the function.
    pub fn branch_signature(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(PRIME);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu { input } => {
                    for &x in self.nodes[input.0].value.data() {
                        mix(u64::from(x > 0.0));
                    }
                }
                Op::MaxPool1d { argmax, .. } => {
                    for &a in argmax {
                        mix(a as u64);
                    }
                }
                _ => {}
            }
        }
        h
    }
}

fn without_grad(mut t: Tensor) -> Tensor {
    t.zero_grad();
    t.set_requires_grad(false);
    t
}
