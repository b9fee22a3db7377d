use std::sync::Arc;

use rand::Rng;

use super::{Matrix, SparseCsr};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
///
/// Handles are only meaningful for the tape that produced them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tensor {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Tensor {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

/// Elementwise single-input operations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Scale(f64),
    Relu,
    LeakyRelu(f64),
    Sigmoid,
}

/// Elementwise two-input operations on equally shaped operands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Hadamard,
}

/// Per-feature learnable affine parameters plus running statistics for batch normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub gamma: Matrix,
    pub beta: Matrix,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    pub fn new(features: usize) -> Self {
        Self {
            gamma: Matrix::filled(1, features, 1.0),
            beta: Matrix::zeros(1, features),
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.cols()
    }

    /// Folds one batch's statistics into the running estimates.
    /// The running variance tracks the unbiased batch variance.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        let correction = if stats.rows > 1 {
            stats.rows as f64 / (stats.rows as f64 - 1.0)
        } else {
            1.0
        };
        for (k, (rm, rv)) in self
            .running_mean
            .iter_mut()
            .zip(self.running_var.iter_mut())
            .enumerate()
        {
            *rm = (1.0 - m) * *rm + m * stats.mean[k];
            *rv = (1.0 - m) * *rv + m * stats.var[k] * correction;
        }
    }
}

/// Batch mean and biased variance observed during a train-mode normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub rows: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    SpMM(Arc<SparseCsr>, usize),
    Unary(Unary, usize),
    Binary(Binary, usize, usize),
    AddRow(usize, usize),
    BroadcastCol(usize),
    ConcatCols(usize, usize),
    Sum(usize),
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        normalized: Matrix,
        inv_std: Vec<f64>,
        batch: bool,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        probs: Matrix,
        labels: Vec<usize>,
        mask: Vec<usize>,
    },
}

struct Node {
    op: Op,
    value: Matrix,
    requires_grad: bool,
}

/// Append-only record of a forward computation, replayed in reverse by [`Tape::backward`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by tensor handle.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, t: Tensor) -> Option<&Matrix> {
        self.grads.get(t.id).and_then(Option::as_ref)
    }

    /// Gradient for `t`, or zeros if nothing flowed into it.
    pub fn get_or_zeros(&self, t: Tensor) -> Matrix {
        self.get(t)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(t.rows, t.cols))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, t: Tensor) -> &Matrix {
        &self.nodes[t.id].value
    }

    fn push(&mut self, op: Op, value: Matrix, requires_grad: bool) -> Tensor {
        let id = self.nodes.len();
        let (rows, cols) = value.shape();
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Tensor { id, rows, cols }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Learnable leaf: receives a gradient on backward.
    pub fn param(&mut self, value: Matrix) -> Tensor {
        self.push(Op::Leaf, value, true)
    }

    /// Constant leaf: no gradient is tracked through it.
    pub fn constant(&mut self, value: Matrix) -> Tensor {
        self.push(Op::Leaf, value, false)
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(&[a.id, b.id]);
        Ok(self.push(Op::MatMul(a.id, b.id), value, rg))
    }

    /// Constant sparse matrix times a recorded dense tensor.
    pub fn spmm(&mut self, s: &Arc<SparseCsr>, d: Tensor) -> Result<Tensor> {
        let value = s.mul_dense(self.value(d))?;
        let rg = self.needs(&[d.id]);
        Ok(self.push(Op::SpMM(Arc::clone(s), d.id), value, rg))
    }

    pub fn unary(&mut self, kind: Unary, a: Tensor) -> Tensor {
        let x = self.value(a);
        let value = match kind {
            Unary::Scale(c) => x.map(|v| c * v),
            Unary::Relu => x.map(|v| v.max(0.0)),
            Unary::LeakyRelu(slope) => x.map(|v| if v > 0.0 { v } else { slope * v }),
            Unary::Sigmoid => x.map(sigmoid),
        };
        let rg = self.needs(&[a.id]);
        self.push(Op::Unary(kind, a.id), value, rg)
    }

    pub fn binary(&mut self, kind: Binary, a: Tensor, b: Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(Error::Dimension {
                op: match kind {
                    Binary::Add => "add",
                    Binary::Sub => "sub",
                    Binary::Hadamard => "hadamard",
                },
                left: a.shape(),
                right: b.shape(),
            });
        }
        let (x, y) = (self.value(a), self.value(b));
        let value = match kind {
            Binary::Add => x.zip_map(y, |p, q| p + q),
            Binary::Sub => x.zip_map(y, |p, q| p - q),
            Binary::Hadamard => x.zip_map(y, |p, q| p * q),
        };
        let rg = self.needs(&[a.id, b.id]);
        Ok(self.push(Op::Binary(kind, a.id, b.id), value, rg))
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn hadamard(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary(Binary::Hadamard, a, b)
    }

    pub fn scale(&mut self, a: Tensor, c: f64) -> Tensor {
        self.unary(Unary::Scale(c), a)
    }

    pub fn relu(&mut self, a: Tensor) -> Tensor {
        self.unary(Unary::Relu, a)
    }

    pub fn leaky_relu(&mut self, a: Tensor, slope: f64) -> Tensor {
        self.unary(Unary::LeakyRelu(slope), a)
    }

    pub fn sigmoid(&mut self, a: Tensor) -> Tensor {
        self.unary(Unary::Sigmoid, a)
    }

    /// Adds a `1 × cols` bias row to every row of `a`.
    pub fn add_row(&mut self, a: Tensor, bias: Tensor) -> Result<Tensor> {
        if bias.rows != 1 || bias.cols != a.cols {
            return Err(Error::Dimension {
                op: "add_row",
                left: a.shape(),
                right: bias.shape(),
            });
        }
        let mut value = self.value(a).clone();
        let b = self.value(bias).row(0).to_vec();
        for r in 0..value.rows() {
            for (v, bb) in value.row_mut(r).iter_mut().zip(&b) {
                *v += bb;
            }
        }
        let rg = self.needs(&[a.id, bias.id]);
        Ok(self.push(Op::AddRow(a.id, bias.id), value, rg))
    }

    /// Repeats an `N × 1` column across `width` columns.
    pub fn broadcast_col(&mut self, v: Tensor, width: usize) -> Result<Tensor> {
        if v.cols != 1 {
            return Err(Error::Dimension {
                op: "broadcast_col",
                left: v.shape(),
                right: (v.rows, 1),
            });
        }
        if width == 0 {
            return Err(Error::Argument("broadcast width must be positive".into()));
        }
        let src = self.value(v);
        let mut value = Matrix::zeros(v.rows, width);
        for r in 0..v.rows {
            value.row_mut(r).fill(src.get(r, 0));
        }
        let rg = self.needs(&[v.id]);
        Ok(self.push(Op::BroadcastCol(v.id), value, rg))
    }

    pub fn concat_cols(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        if a.rows != b.rows {
            return Err(Error::Dimension {
                op: "concat_cols",
                left: a.shape(),
                right: b.shape(),
            });
        }
        let (x, y) = (self.value(a), self.value(b));
        let mut value = Matrix::zeros(a.rows, a.cols + b.cols);
        for r in 0..a.rows {
            let row = value.row_mut(r);
            row[..a.cols].copy_from_slice(x.row(r));
            row[a.cols..].copy_from_slice(y.row(r));
        }
        let rg = self.needs(&[a.id, b.id]);
        Ok(self.push(Op::ConcatCols(a.id, b.id), value, rg))
    }

    /// Sum of all entries as a `1 × 1` tensor.
    pub fn sum(&mut self, a: Tensor) -> Tensor {
        let s = self.value(a).sum();
        let rg = self.needs(&[a.id]);
        self.push(Op::Sum(a.id), Matrix::filled(1, 1, s), rg)
    }

    /// Inverted dropout: zeroes each entry with probability `p` and rescales survivors.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Tensor, p: f64, rng: &mut R) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Argument(format!("dropout probability {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let mut mask = Matrix::zeros(a.rows, a.cols);
        for m in mask.data_mut() {
            if rng.gen::<f64>() >= p {
                *m = keep;
            }
        }
        let mask = self.constant(mask);
        self.hadamard(a, mask)
    }

    /// Batch normalization over rows.
    ///
    /// Train mode normalizes with the batch statistics and returns them so the
    /// caller can fold them into `state`; eval mode uses `state`'s running statistics.
    pub fn batch_norm(
        &mut self,
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        state: &BatchNormState,
        mode: Mode,
    ) -> Result<(Tensor, Option<BatchStats>)> {
        let d = state.features();
        if x.cols != d || gamma.shape() != (1, d) || beta.shape() != (1, d) {
            return Err(Error::Dimension {
                op: "batch_norm",
                left: x.shape(),
                right: (1, d),
            });
        }
        if x.rows == 0 {
            return Err(Error::Argument("batch_norm needs at least one row".into()));
        }
        let xv = self.value(x);
        let n = x.rows;
        let (mean, var, stats) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; d];
                for r in 0..n {
                    for (m, v) in mean.iter_mut().zip(xv.row(r)) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; d];
                for r in 0..n {
                    for ((s, v), m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= n as f64);
                let stats = BatchStats {
                    rows: n,
                    mean: mean.clone(),
                    var: var.clone(),
                };
                (mean, var, Some(stats))
            }
            Mode::Eval => (state.running_mean.clone(), state.running_var.clone(), None),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
        let mut normalized = Matrix::zeros(n, d);
        for r in 0..n {
            for (k, (o, v)) in normalized.row_mut(r).iter_mut().zip(xv.row(r)).enumerate() {
                *o = (v - mean[k]) * inv_std[k];
            }
        }
        let (g, b) = (self.value(gamma).row(0), self.value(beta).row(0));
        let mut value = normalized.clone();
        for r in 0..n {
            for (k, o) in value.row_mut(r).iter_mut().enumerate() {
                *o = *o * g[k] + b[k];
            }
        }
        let rg = self.needs(&[x.id, gamma.id, beta.id]);
        let op = Op::BatchNorm {
            x: x.id,
            gamma: gamma.id,
            beta: beta.id,
            normalized,
            inv_std,
            batch: mode == Mode::Train,
        };
        Ok((self.push(op, value, rg), stats))
    }

    /// Mean over `mask` of the negative log-softmax probability of each row's label.
    pub fn masked_softmax_cross_entropy(
        &mut self,
        logits: Tensor,
        labels: &[usize],
        mask: &[usize],
    ) -> Result<Tensor> {
        if mask.is_empty() {
            return Err(Error::Argument("cross-entropy mask is empty".into()));
        }
        if labels.len() != logits.rows {
            return Err(Error::Dimension {
                op: "masked_softmax_cross_entropy",
                left: logits.shape(),
                right: (labels.len(), 1),
            });
        }
        let k = logits.cols;
        if let Some(&bad) = mask.iter().find(|&&i| i >= logits.rows) {
            return Err(Error::Argument(format!("mask index {bad} out of range")));
        }
        if let Some(&i) = mask.iter().find(|&&i| labels[i] >= k) {
            return Err(Error::Data(format!(
                "label {} of node {i} outside [0, {k})",
                labels[i]
            )));
        }
        let lv = self.value(logits);
        let mut probs = Matrix::zeros(logits.rows, k);
        let mut loss = 0.0;
        for &i in mask {
            let row = lv.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_denom = denom.ln();
            for (p, v) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (v - max).exp() / denom;
            }
            loss -= row[labels[i]] - max - log_denom;
        }
        loss /= mask.len() as f64;
        let rg = self.needs(&[logits.id]);
        let op = Op::SoftmaxCrossEntropy {
            logits: logits.id,
            probs,
            labels: labels.to_vec(),
            mask: mask.to_vec(),
        };
        Ok(self.push(op, Matrix::filled(1, 1, loss), rg))
    }

    /// Reverse sweep from a scalar `loss`. Gradients are summed at fan-out points;
    /// every learnable leaf gets a gradient, zeros when it did not influence the loss.
    pub fn backward(&self, loss: Tensor) -> Result<Gradients> {
        if loss.shape() != (1, 1) {
            return Err(Error::Argument(format!(
                "backward needs a scalar loss, got {:?}",
                loss.shape()
            )));
        }
        if loss.id >= self.nodes.len() {
            return Err(Error::Argument("loss tensor is not on this tape".into()));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Matrix::filled(1, 1, 1.0));

        for id in (0..=loss.id).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            self.propagate(node, &upstream, &mut grads);
            grads[id] = Some(upstream);
        }

        for (id, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[id].is_none() {
                let (r, c) = node.value.shape();
                grads[id] = Some(Matrix::zeros(r, c));
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, up: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |i: usize| &self.nodes[i].value;
        let wants = |i: usize| self.nodes[i].requires_grad;
        let mut emit = |i: usize, g: Matrix| {
            if !self.nodes[i].requires_grad {
                return;
            }
            match &mut grads[i] {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    emit(*a, up.matmul_nt(val(*b)));
                }
                if wants(*b) {
                    emit(*b, val(*a).matmul_tn(up));
                }
            }
            Op::SpMM(s, d) => emit(*d, s.mul_dense_transposed(up)),
            Op::Unary(kind, a) => {
                let x = val(*a);
                let g = match *kind {
                    Unary::Scale(c) => up.map(|u| c * u),
                    Unary::Relu => up.zip_map(x, |u, v| if v > 0.0 { u } else { 0.0 }),
                    Unary::LeakyRelu(slope) => {
                        up.zip_map(x, |u, v| if v > 0.0 { u } else { slope * u })
                    }
                    Unary::Sigmoid => up.zip_map(&node.value, |u, s| u * s * (1.0 - s)),
                };
                emit(*a, g);
            }
            Op::Binary(kind, a, b) => match kind {
                Binary::Add => {
                    emit(*a, up.clone());
                    emit(*b, up.clone());
                }
                Binary::Sub => {
                    emit(*a, up.clone());
                    emit(*b, up.map(|u| -u));
                }
                Binary::Hadamard => {
                    if wants(*a) {
                        emit(*a, up.zip_map(val(*b), |u, y| u * y));
                    }
                    if wants(*b) {
                        emit(*b, up.zip_map(val(*a), |u, x| u * x));
                    }
                }
            },
            Op::AddRow(a, bias) => {
                emit(*a, up.clone());
                if wants(*bias) {
                    emit(*bias, column_sums(up));
                }
            }
            Op::BroadcastCol(v) => {
                let sums: Vec<f64> = (0..up.rows()).map(|r| up.row(r).iter().sum()).collect();
                emit(*v, Matrix::column(&sums));
            }
            Op::ConcatCols(a, b) => {
                let p = val(*a).cols();
                let q = val(*b).cols();
                let mut ga = Matrix::zeros(up.rows(), p);
                let mut gb = Matrix::zeros(up.rows(), q);
                for r in 0..up.rows() {
                    ga.row_mut(r).copy_from_slice(&up.row(r)[..p]);
                    gb.row_mut(r).copy_from_slice(&up.row(r)[p..]);
                }
                emit(*a, ga);
                emit(*b, gb);
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                emit(*a, Matrix::filled(r, c, up.get(0, 0)));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
                batch,
            } => {
                let (n, d) = normalized.shape();
                let g = val(*gamma).row(0);
                if wants(*gamma) {
                    let mut dg = Matrix::zeros(1, d);
                    for r in 0..n {
                        for (k, o) in dg.row_mut(0).iter_mut().enumerate() {
                            *o += up.get(r, k) * normalized.get(r, k);
                        }
                    }
                    emit(*gamma, dg);
                }
                if wants(*beta) {
                    emit(*beta, column_sums(up));
                }
                if wants(*x) {
                    let mut dx = Matrix::zeros(n, d);
                    if *batch {
                        // d xhat = up * gamma; dx = inv_std / n * (n*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                        let mut sum_dxhat = vec![0.0; d];
                        let mut sum_dxhat_xhat = vec![0.0; d];
                        for r in 0..n {
                            for k in 0..d {
                                let dxh = up.get(r, k) * g[k];
                                sum_dxhat[k] += dxh;
                                sum_dxhat_xhat[k] += dxh * normalized.get(r, k);
                            }
                        }
                        let nf = n as f64;
                        for r in 0..n {
                            for k in 0..d {
                                let dxh = up.get(r, k) * g[k];
                                let v = inv_std[k] / nf
                                    * (nf * dxh
                                        - sum_dxhat[k]
                                        - normalized.get(r, k) * sum_dxhat_xhat[k]);
                                dx.set(r, k, v);
                            }
                        }
                    } else {
                        for r in 0..n {
                            for k in 0..d {
                                dx.set(r, k, up.get(r, k) * g[k] * inv_std[k]);
                            }
                        }
                    }
                    emit(*x, dx);
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels,
                mask,
            } => {
                let scale = up.get(0, 0) / mask.len() as f64;
                let mut g = Matrix::zeros(probs.rows(), probs.cols());
                for &i in mask {
                    for (o, p) in g.row_mut(i).iter_mut().zip(probs.row(i)) {
                        *o = p * scale;
                    }
                    let cur = g.get(i, labels[i]);
                    g.set(i, labels[i], cur - scale);
                }
                emit(*logits, g);
            }
        }
    }
}

fn column_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for r in 0..m.rows() {
        for (o, v) in out.row_mut(0).iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
