//! Tape-based reverse-mode differentiation for scalar losses over dense tensors.
//!
//! Parameters live in one flat vector described by a [`ParamLayout`]; every
//! registered tensor owns a contiguous slice of it. [`Tape::backward`] returns
//! a [`Gradient`] with the same layout, so gradients of different losses can
//! be compared, summed or stacked directly.
//!
//! A tape is single-use: it is rebuilt for each forward pass and
//! [`Tape::backward`] refuses to run twice.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("backward root must be a scalar, node {node} has {len} values")]
    NotScalar { node: usize, len: usize },
    #[error("node {node} does not belong to this tape")]
    UnknownNode { node: usize },
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
    #[error("target class {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamSlot {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamSlot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Registry of parameter tensors packed into a single flat vector.
#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamLayout {
    slots: Vec<ParamSlot>,
    len: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        let slot = ParamSlot { name: name.into(), offset: self.len, shape: shape.to_vec() };
        self.len += slot.len();
        self.slots.push(slot);
        ParamId(self.slots.len() - 1)
    }

    pub fn with(mut self, name: impl Into<String>, shape: &[usize]) -> Self {
        self.push(name, shape);
        self
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn slot(&self, id: ParamId) -> &ParamSlot {
        &self.slots[id.0]
    }

    pub fn view<'a>(&self, id: ParamId, flat: &'a [f64]) -> &'a [f64] {
        &flat[self.slot(id).range()]
    }

    pub fn view_mut<'a>(&self, id: ParamId, flat: &'a mut [f64]) -> &'a mut [f64] {
        &mut flat[self.slot(id).range()]
    }
}

/// Flat gradient aligned with a [`ParamLayout`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient(Vec<f64>);

impl Gradient {
    pub fn zeros(len: usize) -> Self {
        Gradient(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for Gradient {
    fn from(v: Vec<f64>) -> Self {
        Gradient(v)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param { offset: usize },
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    AddBias { x: usize, b: usize },
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, factor: f64 },
    Relu { x: usize },
    LogSoftmax { x: usize },
    Sum { x: usize },
    Nll { logp: usize, targets: Vec<usize>, weights: Option<Vec<f64>> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param { .. } => "param",
            Op::MatMul { .. } => "matmul",
            Op::AddBias { .. } => "add_bias",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Relu { .. } => "relu",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::Sum { .. } => "sum",
            Op::Nll { .. } => "nll_loss",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only record of primitive operations.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    num_params: usize,
    consumed: bool,
}

impl Tape {
    /// Creates a tape whose gradients have `num_params` entries.
    pub fn new(num_params: usize) -> Self {
        Tape { nodes: Vec::new(), num_params, consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn check(&self, v: Var) -> Result<&Tensor, AutodiffError> {
        self.nodes.get(v.0).map(|n| &n.value).ok_or(AutodiffError::UnknownNode { node: v.0 })
    }

    fn record(&mut self, op: Op, value: Tensor) -> Result<Var, AutodiffError> {
        let id = self.nodes.len();
        if !value.all_finite() {
            return Err(AutodiffError::NonFinite { node: id, op: op.name() });
        }
        self.nodes.push(Node { op, value });
        Ok(Var(id))
    }

    /// Records a tensor that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var, AutodiffError> {
        self.record(Op::Constant, value)
    }

    /// Records the parameter tensor `id`, read from `flat`.
    pub fn param(&mut self, layout: &ParamLayout, id: ParamId, flat: &[f64]) -> Result<Var, AutodiffError> {
        let slot = layout.slot(id);
        if slot.offset + slot.len() > self.num_params || flat.len() != layout.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "param",
                detail: alloc::format!(
                    "slot {} [{}..{}) vs tape with {} params and flat vector of {}",
                    slot.name,
                    slot.offset,
                    slot.offset + slot.len(),
                    self.num_params,
                    flat.len()
                ),
            });
        }
        let value = Tensor::new(slot.shape.clone(), flat[slot.range()].to_vec())?;
        self.record(Op::Param { offset: slot.offset }, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                detail: alloc::format!("{:?} x {:?}", ta.shape(), tb.shape()),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        self.record(Op::MatMul { a: a.0, b: b.0, m, k, n }, value)
    }

    /// Adds the vector `b` (length `n`) to every row of `x` (`m x n`).
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, AutodiffError> {
        let (tx, tb) = (self.check(x)?, self.check(b)?);
        if tx.shape().len() != 2 || tb.len() != tx.shape()[1] {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_bias",
                detail: alloc::format!("{:?} + {:?}", tx.shape(), tb.shape()),
            });
        }
        let n = tx.shape()[1];
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, &bv) in row.iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        self.record(Op::AddBias { x: x.0, b: b.0 }, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = self.same_shape("add", a, b)?;
        let out = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        self.record(Op::Add { a: a.0, b: b.0 }, value)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = self.same_shape("mul", a, b)?;
        let out = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        self.record(Op::Mul { a: a.0, b: b.0 }, value)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, AutodiffError> {
        let tx = self.check(x)?;
        let out = tx.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        self.record(Op::Scale { x: x.0, factor }, value)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let tx = self.check(x)?;
        let out = tx.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        self.record(Op::Relu { x: x.0 }, value)
    }

    /// Row-wise log-softmax of a matrix (a vector is treated as one row).
    pub fn log_softmax(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let tx = self.check(x)?;
        let c = tx.cols();
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        self.record(Op::LogSoftmax { x: x.0 }, value)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let s = self.check(x)?.data().iter().sum();
        self.record(Op::Sum { x: x.0 }, Tensor::scalar(s))
    }

    /// Mean negative log-likelihood `(1/B) sum_i w_i * (-logp[i, t_i])`.
    ///
    /// Without weights every `w_i` is 1. The divisor is the batch size, not the
    /// weight total, so scaled weights scale the loss.
    pub fn nll_loss(&mut self, logp: Var, targets: &[usize], weights: Option<&[f64]>) -> Result<Var, AutodiffError> {
        let tl = self.check(logp)?;
        if tl.shape().len() != 2 || tl.shape()[0] != targets.len() || targets.is_empty() {
            return Err(AutodiffError::ShapeMismatch {
                op: "nll_loss",
                detail: alloc::format!("logp {:?} with {} targets", tl.shape(), targets.len()),
            });
        }
        if let Some(w) = weights {
            if w.len() != targets.len() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "nll_loss",
                    detail: alloc::format!("{} weights for {} targets", w.len(), targets.len()),
                });
            }
        }
        let c = tl.shape()[1];
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(AutodiffError::TargetOutOfRange { target: t, classes: c });
            }
            let w = weights.map_or(1.0, |w| w[i]);
            total -= w * tl.data()[i * c + t];
        }
        let loss = total / targets.len() as f64;
        self.record(
            Op::Nll { logp: logp.0, targets: targets.to_vec(), weights: weights.map(|w| w.to_vec()) },
            Tensor::scalar(loss),
        )
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(&Tensor, &Tensor), AutodiffError> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        if ta.shape() != tb.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op,
                detail: alloc::format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            });
        }
        Ok((ta, tb))
    }

    /// Differentiates the scalar `root` with respect to every parameter
    /// recorded on this tape. Unused parameters get zero gradient.
    pub fn backward(&mut self, root: Var) -> Result<Gradient, AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::TapeConsumed);
        }
        let root_len = self.check(root)?.len();
        if root_len != 1 {
            return Err(AutodiffError::NotScalar { node: root.0, len: root_len });
        }
        self.consumed = true;

        let mut grad = Gradient::zeros(self.num_params);
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);

        for id in (0..=root.0).rev() {
            let Some(dy) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Constant => {}
                Op::Param { offset } => {
                    for (g, d) in grad.0[*offset..*offset + dy.len()].iter_mut().zip(&dy) {
                        *g += d;
                    }
                }
                &Op::MatMul { a, b, m, k, n } => {
                    let (va, vb) = (self.nodes[a].value.data(), self.nodes[b].value.data());
                    let mut da = vec![0.0; m * k];
                    gemm_nt_acc(&dy, vb, &mut da, m, n, k);
                    accumulate(&mut adj, a, da);
                    let mut db = vec![0.0; k * n];
                    gemm_tn_acc(va, &dy, &mut db, m, k, n);
                    accumulate(&mut adj, b, db);
                }
                &Op::AddBias { x, b } => {
                    let n = node.value.cols();
                    let mut db = vec![0.0; n];
                    for row in dy.chunks(n) {
                        for (d, r) in db.iter_mut().zip(row) {
                            *d += r;
                        }
                    }
                    accumulate(&mut adj, b, db);
                    accumulate(&mut adj, x, dy);
                }
                &Op::Add { a, b } => {
                    accumulate(&mut adj, a, dy.clone());
                    accumulate(&mut adj, b, dy);
                }
                &Op::Mul { a, b } => {
                    let (va, vb) = (self.nodes[a].value.data(), self.nodes[b].value.data());
                    let da = dy.iter().zip(vb).map(|(d, y)| d * y).collect();
                    let db = dy.iter().zip(va).map(|(d, x)| d * x).collect();
                    accumulate(&mut adj, a, da);
                    accumulate(&mut adj, b, db);
                }
                &Op::Scale { x, factor } => {
                    accumulate(&mut adj, x, dy.iter().map(|d| d * factor).collect());
                }
                &Op::Relu { x } => {
                    let out = node.value.data();
                    let dx = dy.iter().zip(out).map(|(d, &y)| if y > 0.0 { *d } else { 0.0 }).collect();
                    accumulate(&mut adj, x, dx);
                }
                &Op::LogSoftmax { x } => {
                    let c = node.value.cols();
                    let out = node.value.data();
                    let mut dx = vec![0.0; dy.len()];
                    for ((dx_row, dy_row), y_row) in dx.chunks_mut(c).zip(dy.chunks(c)).zip(out.chunks(c)) {
                        let s: f64 = dy_row.iter().sum();
                        for ((o, d), y) in dx_row.iter_mut().zip(dy_row).zip(y_row) {
                            *o = d - libm::exp(*y) * s;
                        }
                    }
                    accumulate(&mut adj, x, dx);
                }
                &Op::Sum { x } => {
                    let len = self.nodes[x].value.len();
                    accumulate(&mut adj, x, vec![dy[0]; len]);
                }
                Op::Nll { logp, targets, weights } => {
                    let c = self.nodes[*logp].value.cols();
                    let scale = dy[0] / targets.len() as f64;
                    let mut dl = vec![0.0; targets.len() * c];
                    for (i, &t) in targets.iter().enumerate() {
                        let w = weights.as_ref().map_or(1.0, |w| w[i]);
                        dl[i * c + t] = -w * scale;
                    }
                    accumulate(&mut adj, *logp, dl);
                }
            }
        }

        if !grad.is_finite() {
            return Err(AutodiffError::NonFinite { node: root.0, op: "backward" });
        }
        Ok(grad)
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], id: usize, d: Vec<f64>) {
    match &mut adj[id] {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(d) {
                *a += v;
            }
        }
        slot @ None => *slot = Some(d),
    }
}
