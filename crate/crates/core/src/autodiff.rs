//! Minimal reverse-mode differentiation over dense 2-D double tensors:
//! a dynamic tape sufficient for GRU seq2seq models, additive attention,
//! and the style classifier.
//!
//! Shapes are checked eagerly and violations panic, like the dense-algebra
//! crates this engine stands in for. Model-level APIs validate their inputs
//! and return errors before building graphs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Dense row-major matrix of doubles. Scalars are 1x1, row vectors 1xN.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        assert_eq!(data.len(), rows * cols, "tensor data does not fill shape");
        Tensor { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(1, 1, vec![v])
    }

    /// Standard-normal draws scaled by `std` (Box-Muller, deterministic
    /// under the caller's RNG).
    pub fn randn(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Tensor {
        let mut data = Vec::with_capacity(rows * cols);
        while data.len() < rows * cols {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen::<f64>();
            let radius = (-2.0 * u1.ln()).sqrt();
            let angle = 2.0 * std::f64::consts::PI * u2;
            data.push(radius * angle.cos() * std);
            if data.len() < rows * cols {
                data.push(radius * angle.sin() * std);
            }
        }
        Tensor { rows, cols, data }
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() needs a scalar tensor");
        self.data[0]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn same_shape(&self, other: &Tensor, op: &str) {
        assert_eq!(
            self.shape(),
            other.shape(),
            "{op}: shape mismatch {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
    }
}

fn matmul_plain(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(
        a.cols, b.rows,
        "matmul: inner dimensions {} vs {}",
        a.cols, b.rows
    );
    let mut out = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for j in 0..b.cols {
                orow[j] += aik * brow[j];
            }
        }
    }
    out
}

fn transpose_plain(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(t.cols, t.rows);
    for r in 0..t.rows {
        for c in 0..t.cols {
            out.data[c * t.rows + r] = t.data[r * t.cols + c];
        }
    }
    out
}

fn softmax_rows_plain(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for r in 0..t.rows {
        let row = &mut out.data[r * t.cols..(r + 1) * t.cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Transpose(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    Row(NodeId, usize),
    Sigmoid(NodeId),
    Tanh(NodeId),
    SoftmaxRows(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    MeanRows(NodeId),
    CrossEntropy { logits: NodeId, target: usize },
    BceWithLogit { logit: NodeId, label: f64 },
    EmbedLookup { table: NodeId, ids: Vec<u32> },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run tape. One tape per forward pass; `backward` runs once.
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite forward value");
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Constant input; gradients never flow into it.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable input; `grad` is populated after `backward`.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Same value, cut from the graph.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let value = self.nodes[id.0].value.clone();
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated at a node, absent for non-differentiable nodes.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = matmul_plain(self.value(a), self.value(b));
        let req = self.requires(a) || self.requires(b);
        self.push(value, Op::MatMul(a, b), req)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.value(a).same_shape(self.value(b), "add");
        let value = Tensor {
            rows: self.value(a).rows,
            cols: self.value(a).cols,
            data: self
                .value(a)
                .data
                .iter()
                .zip(&self.value(b).data)
                .map(|(x, y)| x + y)
                .collect(),
        };
        let req = self.requires(a) || self.requires(b);
        self.push(value, Op::Add(a, b), req)
    }

    /// Matrix plus a broadcast row (the bias pattern).
    pub fn add_row(&mut self, m: NodeId, row: NodeId) -> NodeId {
        let (mr, mc) = self.value(m).shape();
        let (rr, rc) = self.value(row).shape();
        assert_eq!((rr, rc), (1, mc), "add_row: row must be 1x{mc}, got {rr}x{rc}");
        let mut value = self.value(m).clone();
        for r in 0..mr {
            for c in 0..mc {
                value.data[r * mc + c] += self.value(row).data[c];
            }
        }
        let req = self.requires(m) || self.requires(row);
        self.push(value, Op::AddRow(m, row), req)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.value(a).same_shape(self.value(b), "sub");
        let value = Tensor {
            rows: self.value(a).rows,
            cols: self.value(a).cols,
            data: self
                .value(a)
                .data
                .iter()
                .zip(&self.value(b).data)
                .map(|(x, y)| x - y)
                .collect(),
        };
        let req = self.requires(a) || self.requires(b);
        self.push(value, Op::Sub(a, b), req)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.value(a).same_shape(self.value(b), "mul");
        let value = Tensor {
            rows: self.value(a).rows,
            cols: self.value(a).cols,
            data: self
                .value(a)
                .data
                .iter()
                .zip(&self.value(b).data)
                .map(|(x, y)| x * y)
                .collect(),
        };
        let req = self.requires(a) || self.requires(b);
        self.push(value, Op::Mul(a, b), req)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = Tensor {
            rows: self.value(a).rows,
            cols: self.value(a).cols,
            data: self.value(a).data.iter().map(|x| x * c).collect(),
        };
        let req = self.requires(a);
        self.push(value, Op::Scale(a, c), req)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = transpose_plain(self.value(a));
        let req = self.requires(a);
        self.push(value, Op::Transpose(a), req)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let rows = self.value(parts[0]).rows;
        let mut cols = 0;
        for &p in parts {
            assert_eq!(self.value(p).rows, rows, "concat_cols: row mismatch");
            cols += self.value(p).cols;
        }
        let mut value = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            for r in 0..rows {
                for c in 0..t.cols {
                    value.data[r * cols + offset + c] = t.data[r * t.cols + c];
                }
            }
            offset += t.cols;
        }
        let req = parts.iter().any(|&p| self.requires(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), req)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_rows: no inputs");
        let cols = self.value(parts[0]).cols;
        let mut rows = 0;
        for &p in parts {
            assert_eq!(self.value(p).cols, cols, "concat_rows: column mismatch");
            rows += self.value(p).rows;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(&self.value(p).data);
        }
        let req = parts.iter().any(|&p| self.requires(p));
        self.push(Tensor { rows, cols, data }, Op::ConcatRows(parts.to_vec()), req)
    }

    /// One row of a matrix as a 1xN tensor.
    pub fn row(&mut self, a: NodeId, r: usize) -> NodeId {
        let t = self.value(a);
        assert!(r < t.rows, "row {} out of {} rows", r, t.rows);
        let value = Tensor::from_vec(1, t.cols, t.row_slice(r).to_vec());
        let req = self.requires(a);
        self.push(value, Op::Row(a, r), req)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = Tensor {
            rows: self.value(a).rows,
            cols: self.value(a).cols,
            data: self
                .value(a)
                .data
                .iter()
                .map(|x| 1.0 / (1.0 + (-x).exp()))
                .collect(),
        };
        let req = self.requires(a);
        self.push(value, Op::Sigmoid(a), req)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = Tensor {
            rows: self.value(a).rows,
            cols: self.value(a).cols,
            data: self.value(a).data.iter().map(|x| x.tanh()).collect(),
        };
        let req = self.requires(a);
        self.push(value, Op::Tanh(a), req)
    }

    /// Shift-normalized softmax along each row.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let value = softmax_rows_plain(self.value(a));
        let req = self.requires(a);
        self.push(value, Op::SoftmaxRows(a), req)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(a).data.iter().sum());
        let req = self.requires(a);
        self.push(value, Op::SumAll(a), req)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).numel() as f64;
        let value = Tensor::scalar(self.value(a).data.iter().sum::<f64>() / n);
        let req = self.requires(a);
        self.push(value, Op::MeanAll(a), req)
    }

    /// Column-wise mean over rows: (m,n) -> (1,n). The pooling layer.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let mut value = Tensor::zeros(1, t.cols);
        for r in 0..t.rows {
            for c in 0..t.cols {
                value.data[c] += t.data[r * t.cols + c];
            }
        }
        for v in value.data.iter_mut() {
            *v /= t.rows as f64;
        }
        let req = self.requires(a);
        self.push(value, Op::MeanRows(a), req)
    }

    /// Negative log softmax probability of `target` under 1xV logits.
    pub fn cross_entropy(&mut self, logits: NodeId, target: usize) -> NodeId {
        let t = self.value(logits);
        assert_eq!(t.rows, 1, "cross_entropy expects 1xV logits");
        assert!(
            target < t.cols,
            "cross_entropy target {} out of range {}",
            target,
            t.cols
        );
        let max = t.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + t.data.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let value = Tensor::scalar(lse - t.data[target]);
        let req = self.requires(logits);
        self.push(value, Op::CrossEntropy { logits, target }, req)
    }

    /// Numerically stable binary cross entropy on a scalar logit.
    pub fn bce_with_logit(&mut self, logit: NodeId, label: f64) -> NodeId {
        let z = self.value(logit).item();
        let loss = z.max(0.0) - z * label + (1.0 + (-z.abs()).exp()).ln();
        let req = self.requires(logit);
        self.push(Tensor::scalar(loss), Op::BceWithLogit { logit, label }, req)
    }

    /// Gather rows of an embedding table: (V,d) + ids -> (L,d).
    pub fn embed_lookup(&mut self, table: NodeId, ids: &[u32]) -> NodeId {
        assert!(!ids.is_empty(), "embed_lookup: empty id list");
        let t = self.value(table);
        let cols = t.cols;
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            assert!(
                (id as usize) < t.rows,
                "embed_lookup id {} out of {} rows",
                id,
                t.rows
            );
            data.extend_from_slice(t.row_slice(id as usize));
        }
        let req = self.requires(table);
        self.push(
            Tensor {
                rows: ids.len(),
                cols,
                data,
            },
            Op::EmbedLookup {
                table,
                ids: ids.to_vec(),
            },
            req,
        )
    }

    fn accumulate(&mut self, id: NodeId, grad: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut self.nodes[id.0].grad {
            Some(g) => {
                g.same_shape(&grad, "grad accumulate");
                for (a, b) in g.data.iter_mut().zip(&grad.data) {
                    *a += b;
                }
            }
            None => self.nodes[id.0].grad = Some(grad),
        }
    }

    /// Reverse sweep from a scalar loss. Populates `grad` on every
    /// `requires_grad` node reachable from the loss.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        self.backward_done = true;
        if self.value(loss).numel() != 1 {
            return Err(Error::Numerical("backward needs a scalar loss".into()));
        }
        if !self.nodes[loss.0].requires_grad {
            // Loss does not depend on any parameter; nothing to do.
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(grad) = self.nodes[i].grad.clone() else {
                continue;
            };
            match self.nodes[i].op.clone() {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.requires(a) {
                        let bt = transpose_plain(self.value(b));
                        self.accumulate(a, matmul_plain(&grad, &bt));
                    }
                    if self.requires(b) {
                        let at = transpose_plain(self.value(a));
                        self.accumulate(b, matmul_plain(&at, &grad));
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(a, grad.clone());
                    self.accumulate(b, grad);
                }
                Op::AddRow(m, row) => {
                    if self.requires(row) {
                        let mut rg = Tensor::zeros(1, grad.cols);
                        for r in 0..grad.rows {
                            for c in 0..grad.cols {
                                rg.data[c] += grad.data[r * grad.cols + c];
                            }
                        }
                        self.accumulate(row, rg);
                    }
                    self.accumulate(m, grad);
                }
                Op::Sub(a, b) => {
                    if self.requires(b) {
                        let neg = Tensor {
                            rows: grad.rows,
                            cols: grad.cols,
                            data: grad.data.iter().map(|x| -x).collect(),
                        };
                        self.accumulate(b, neg);
                    }
                    self.accumulate(a, grad);
                }
                Op::Mul(a, b) => {
                    if self.requires(a) {
                        let mut g = grad.clone();
                        for (x, y) in g.data.iter_mut().zip(&self.value(b).data) {
                            *x *= y;
                        }
                        self.accumulate(a, g);
                    }
                    if self.requires(b) {
                        let mut g = grad.clone();
                        for (x, y) in g.data.iter_mut().zip(&self.value(a).data) {
                            *x *= y;
                        }
                        self.accumulate(b, g);
                    }
                }
                Op::Scale(a, c) => {
                    let g = Tensor {
                        rows: grad.rows,
                        cols: grad.cols,
                        data: grad.data.iter().map(|x| x * c).collect(),
                    };
                    self.accumulate(a, g);
                }
                Op::Transpose(a) => {
                    self.accumulate(a, transpose_plain(&grad));
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let pc = self.value(p).cols;
                        if self.requires(p) {
                            let mut g = Tensor::zeros(grad.rows, pc);
                            for r in 0..grad.rows {
                                for c in 0..pc {
                                    g.data[r * pc + c] = grad.data[r * grad.cols + offset + c];
                                }
                            }
                            self.accumulate(p, g);
                        }
                        offset += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let pr = self.value(p).rows;
                        if self.requires(p) {
                            let g = Tensor::from_vec(
                                pr,
                                grad.cols,
                                grad.data[offset * grad.cols..(offset + pr) * grad.cols].to_vec(),
                            );
                            self.accumulate(p, g);
                        }
                        offset += pr;
                    }
                }
                Op::Row(a, r) => {
                    if self.requires(a) {
                        let t = self.value(a);
                        let mut g = Tensor::zeros(t.rows, t.cols);
                        g.data[r * t.cols..(r + 1) * t.cols].copy_from_slice(&grad.data);
                        self.accumulate(a, g);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[i].value;
                    let g = Tensor {
                        rows: grad.rows,
                        cols: grad.cols,
                        data: grad
                            .data
                            .iter()
                            .zip(&y.data)
                            .map(|(g, y)| g * y * (1.0 - y))
                            .collect(),
                    };
                    self.accumulate(a, g);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    let g = Tensor {
                        rows: grad.rows,
                        cols: grad.cols,
                        data: grad
                            .data
                            .iter()
                            .zip(&y.data)
                            .map(|(g, y)| g * (1.0 - y * y))
                            .collect(),
                    };
                    self.accumulate(a, g);
                }
                Op::SoftmaxRows(a) => {
                    let y = self.nodes[i].value.clone();
                    let mut g = Tensor::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let yr = &y.data[r * y.cols..(r + 1) * y.cols];
                        let gr = &grad.data[r * y.cols..(r + 1) * y.cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for c in 0..y.cols {
                            g.data[r * y.cols + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    self.accumulate(a, g);
                }
                Op::SumAll(a) => {
                    let t = self.value(a);
                    let g = Tensor {
                        rows: t.rows,
                        cols: t.cols,
                        data: vec![grad.item(); t.numel()],
                    };
                    self.accumulate(a, g);
                }
                Op::MeanAll(a) => {
                    let t = self.value(a);
                    let v = grad.item() / t.numel() as f64;
                    let g = Tensor {
                        rows: t.rows,
                        cols: t.cols,
                        data: vec![v; t.numel()],
                    };
                    self.accumulate(a, g);
                }
                Op::MeanRows(a) => {
                    let t = self.value(a);
                    let mut g = Tensor::zeros(t.rows, t.cols);
                    for r in 0..t.rows {
                        for c in 0..t.cols {
                            g.data[r * t.cols + c] = grad.data[c] / t.rows as f64;
                        }
                    }
                    self.accumulate(a, g);
                }
                Op::CrossEntropy { logits, target } => {
                    if self.requires(logits) {
                        let mut g = softmax_rows_plain(self.value(logits));
                        g.data[target] -= 1.0;
                        let scale = grad.item();
                        for v in g.data.iter_mut() {
                            *v *= scale;
                        }
                        self.accumulate(logits, g);
                    }
                }
                Op::BceWithLogit { logit, label } => {
                    if self.requires(logit) {
                        let z = self.value(logit).item();
                        let sig = 1.0 / (1.0 + (-z).exp());
                        self.accumulate(logit, Tensor::scalar((sig - label) * grad.item()));
                    }
                }
                Op::EmbedLookup { table, ids } => {
                    if self.requires(table) {
                        let t = self.value(table);
                        let mut g = Tensor::zeros(t.rows, t.cols);
                        for (row, &id) in ids.iter().enumerate() {
                            let base = id as usize * t.cols;
                            for c in 0..t.cols {
                                g.data[base + c] += grad.data[row * t.cols + c];
                            }
                        }
                        self.accumulate(table, g);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Finite-difference gradient checking used across the model test suites.
pub mod gradcheck {
    use super::*;
    use rand::SeedableRng;

    /// Builds the loss for a set of parameter nodes. Called repeatedly with
    /// fresh tapes holding perturbed parameter values.
    pub type LossBuilder<'a> = &'a dyn Fn(&mut Tape, &[NodeId]) -> NodeId;

    /// Maximum elementwise deviation between analytic and central-difference
    /// gradients, as `|a - n| / max(|a| + |n|, 1)` after discarding
    /// differences below the finite-difference noise floor.
    pub fn max_relative_error(shapes: &[(usize, usize)], seed: u64, build: LossBuilder) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<Tensor> = shapes
            .iter()
            .map(|&(r, c)| Tensor::randn(r, c, 0.5, &mut rng))
            .collect();

        let mut tape = Tape::new();
        let ids: Vec<NodeId> = params.iter().map(|p| tape.param(p.clone())).collect();
        let loss = build(&mut tape, &ids);
        tape.backward(loss).expect("gradcheck backward");
        let analytic: Vec<Tensor> = ids
            .iter()
            .zip(shapes)
            .map(|(&id, &(r, c))| tape.grad(id).cloned().unwrap_or_else(|| Tensor::zeros(r, c)))
            .collect();

        let eval = |params: &[Tensor]| -> f64 {
            let mut tape = Tape::new();
            let ids: Vec<NodeId> = params.iter().map(|p| tape.leaf(p.clone())).collect();
            let loss = build(&mut tape, &ids);
            tape.value(loss).item()
        };

        let eps = 1e-4;
        let mut worst: f64 = 0.0;
        for (pi, shape) in shapes.iter().enumerate() {
            for idx in 0..shape.0 * shape.1 {
                let mut plus = params.clone();
                plus[pi].data_mut()[idx] += eps;
                let mut minus = params.clone();
                minus[pi].data_mut()[idx] -= eps;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
                let a = analytic[pi].data()[idx];
                if (a - numeric).abs() < 1e-7 {
                    continue;
                }
                let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1.0);
                worst = worst.max(rel);
            }
        }
        worst
    }
}
