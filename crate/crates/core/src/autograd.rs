//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation of one forward pass. Calling
//! [`Graph::backward`] on a `1 x 1` node walks the tape in reverse and returns
//! the gradient of that scalar with respect to every parameter that was read
//! through [`Graph::param`]. Graphs are cheap and single-use; build a fresh one
//! per sample.

use std::collections::HashMap;

use crate::error::{EfaError, Result};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::{log_sum_exp, sigmoid, softmax_rows, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Affine { input: NodeId, scale: f64 },
    Sigmoid(NodeId),
    Gelu(NodeId),
    Softmax(NodeId),
    SliceCols { input: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    MeanRows(NodeId),
    LayerNorm { input: NodeId, gamma: NodeId, beta: NodeId, normalized: Matrix, inv_std: Vec<f64> },
    Gather { table: NodeId, ids: Vec<usize> },
    CrossEntropy { logits: NodeId, targets: Vec<usize>, smoothing: f64, probs: Matrix },
    BceWithLogits { logit: NodeId, target: f64 },
}

struct Node {
    value: Matrix,
    op: Op,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self { store, nodes: Vec::new(), param_nodes: HashMap::new() }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant leaf. Gradients do not flow into inputs.
    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        let node = self.push(self.store.value(id).clone(), Op::Param(id));
        self.param_nodes.insert(id, node);
        node
    }

    fn check(&self, ok: bool, what: impl FnOnce() -> String) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(EfaError::Shape(what()))
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        self.check(sa.1 == sb.0, || format!("matmul {sa:?} x {sb:?}"))?;
        let v = self.value(a).matmul(self.value(b));
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        self.check(sa.1 == sb.1, || format!("matmul_t {sa:?} x {sb:?}^T"))?;
        let v = self.value(a).matmul_t(self.value(b));
        Ok(self.push(v, Op::MatMulT(a, b)))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, op: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        self.check(sa == sb, || format!("{op} {sa:?} vs {sb:?}"))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    fn row_broadcast(&self, a: NodeId, row: NodeId, op: &str) -> Result<()> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        self.check(sr.0 == 1 && sr.1 == sa.1, || format!("{op} {sa:?} with row {sr:?}"))
    }

    /// Adds a `1 x m` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.row_broadcast(a, row, "add_row")?;
        let r = self.value(row).as_slice().to_vec();
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            for (x, y) in v.row_mut(i).iter_mut().zip(&r) {
                *x += y;
            }
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    /// Multiplies every row of `a` elementwise by a `1 x m` row.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.row_broadcast(a, row, "mul_row")?;
        let r = self.value(row).as_slice().to_vec();
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            for (x, y) in v.row_mut(i).iter_mut().zip(&r) {
                *x *= y;
            }
        }
        Ok(self.push(v, Op::MulRow(a, row)))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: NodeId, scale: f64, shift: f64) -> NodeId {
        let v = self.value(a).map(|x| scale * x + shift);
        self.push(v, Op::Affine { input: a, scale })
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.affine(a, factor, 0.0)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()));
        self.push(v, Op::Gelu(a))
    }

    pub fn softmax(&mut self, a: NodeId, causal: bool) -> NodeId {
        let v = softmax_rows(self.value(a), causal);
        self.push(v, Op::Softmax(a))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let s = self.shape(a);
        self.check(start + len <= s.1, || format!("slice {start}..{} of {s:?}", start + len))?;
        let v = self.value(a).slice_cols(start, len);
        Ok(self.push(v, Op::SliceCols { input: a, start }))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::concat_cols(&values)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mean_rows();
        self.push(v, Op::MeanRows(a))
    }

    /// Per-row layer normalisation with a learned `1 x m` gain and bias.
    pub fn layer_norm(&mut self, a: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        self.row_broadcast(a, gamma, "layer_norm gain")?;
        self.row_broadcast(a, beta, "layer_norm bias")?;
        let x = self.value(a);
        let (n, m) = x.shape();
        let mut normalized = Matrix::zeros(n, m);
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, v) in normalized.row_mut(i).iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let (g, b) = (self.value(gamma), self.value(beta));
        let v = Matrix::from_fn(n, m, |i, j| normalized[(i, j)] * g[(0, j)] + b[(0, j)]);
        Ok(self.push(v, Op::LayerNorm { input: a, gamma, beta, normalized, inv_std }))
    }

    /// Row lookup: output row `t` is `table[ids[t]]`.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let rows = self.shape(table).0;
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(EfaError::TokenOutOfVocabulary { id: bad, size: rows });
        }
        let v = self.value(table).select_rows(ids);
        Ok(self.push(v, Op::Gather { table, ids: ids.to_vec() }))
    }

    /// Mean over rows of the label-smoothed cross-entropy between `softmax(logits)`
    /// and `(1 - smoothing) * onehot(target) + smoothing / classes`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], smoothing: f64) -> Result<NodeId> {
        let x = self.value(logits);
        let (n, m) = x.shape();
        self.check(targets.len() == n && n > 0, || format!("{} targets for {n} logit rows", targets.len()))?;
        if let Some(&bad) = targets.iter().find(|&&t| t >= m) {
            return Err(EfaError::InvalidArgument(format!("target class {bad} >= {m}")));
        }
        if !x.is_finite() {
            return Err(EfaError::NonFinite("cross-entropy logits".into()));
        }
        let mut probs = Matrix::zeros(n, m);
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = x.row(i);
            let lse = log_sum_exp(row);
            let mean_logit = row.iter().sum::<f64>() / m as f64;
            total += lse - (1.0 - smoothing) * row[t] - smoothing * mean_logit;
            for (p, v) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let v = Matrix::row_vector(vec![total / n as f64]);
        Ok(self.push(v, Op::CrossEntropy { logits, targets: targets.to_vec(), smoothing, probs }))
    }

    /// Binary cross-entropy of `sigmoid(logit)` against `target` in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logit: NodeId, target: f64) -> Result<NodeId> {
        self.check(self.shape(logit) == (1, 1), || format!("bce expects a 1x1 logit, got {:?}", self.shape(logit)))?;
        let x = self.value(logit)[(0, 0)];
        if !x.is_finite() {
            return Err(EfaError::NonFinite("quality logit".into()));
        }
        let loss = x.max(0.0) - x * target + (-x.abs()).exp().ln_1p();
        Ok(self.push(Matrix::row_vector(vec![loss]), Op::BceWithLogits { logit, target }))
    }

    /// Gradient of the scalar node `loss` with respect to every parameter read by this graph.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(EfaError::Shape(format!("backward needs a scalar, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut out = Gradients::empty(self.store.len());

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut send = |target: NodeId, delta: Matrix| match &mut grads[target.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            };
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => out.accumulate(*pid, &g),
                Op::MatMul(a, b) => {
                    send(*a, g.matmul_t(self.value(*b)));
                    send(*b, self.value(*a).t_matmul(&g));
                }
                Op::MatMulT(a, b) => {
                    // y = a b^T: da = g b, db = g^T a
                    send(*a, g.matmul(self.value(*b)));
                    send(*b, g.t_matmul(self.value(*a)));
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*a, g.clone());
                    send(*b, g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    send(*a, g.zip_map(self.value(*b), |x, y| x * y));
                    send(*b, g.zip_map(self.value(*a), |x, y| x * y));
                }
                Op::AddRow(a, row) => {
                    let mut summed = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (s, v) in summed.row_mut(0).iter_mut().zip(g.row(i)) {
                            *s += v;
                        }
                    }
                    send(*a, g);
                    send(*row, summed);
                }
                Op::MulRow(a, row) => {
                    let r = self.value(*row);
                    let av = self.value(*a);
                    let mut dr = Matrix::zeros(1, g.cols());
                    let mut da = g.clone();
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            dr[(0, j)] += g[(i, j)] * av[(i, j)];
                            da[(i, j)] *= r[(0, j)];
                        }
                    }
                    send(*a, da);
                    send(*row, dr);
                }
                Op::Affine { input, scale } => send(*input, g.scale(*scale)),
                Op::Sigmoid(a) => send(*a, g.zip_map(&node.value, |d, y| d * y * (1.0 - y))),
                Op::Gelu(a) => {
                    let d = g.zip_map(self.value(*a), |d, x| {
                        let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                        d * (0.5 * (1.0 + t) + 0.5 * x * dt)
                    });
                    send(*a, d);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut d = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let dot: f64 = y.row(i).iter().zip(g.row(i)).map(|(p, q)| p * q).sum();
                        for j in 0..y.cols() {
                            d[(i, j)] = y[(i, j)] * (g[(i, j)] - dot);
                        }
                    }
                    send(*a, d);
                }
                Op::SliceCols { input, start } => {
                    let (n, m) = self.shape(*input);
                    let mut d = Matrix::zeros(n, m);
                    for i in 0..n {
                        d.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    send(*input, d);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        send(p, g.slice_cols(offset, w));
                        offset += w;
                    }
                }
                Op::MeanRows(a) => {
                    let n = self.shape(*a).0;
                    let d = Matrix::from_fn(n, g.cols(), |_, j| g[(0, j)] / n as f64);
                    send(*a, d);
                }
                Op::LayerNorm { input, gamma, beta, normalized, inv_std } => {
                    let gam = self.value(*gamma);
                    let (n, m) = normalized.shape();
                    let mut dgamma = Matrix::zeros(1, m);
                    let mut dbeta = Matrix::zeros(1, m);
                    let mut dx = Matrix::zeros(n, m);
                    for i in 0..n {
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_xhat = 0.0;
                        for j in 0..m {
                            let dy = g[(i, j)];
                            dgamma[(0, j)] += dy * normalized[(i, j)];
                            dbeta[(0, j)] += dy;
                            let dxhat = dy * gam[(0, j)];
                            mean_dxhat += dxhat;
                            mean_dxhat_xhat += dxhat * normalized[(i, j)];
                        }
                        mean_dxhat /= m as f64;
                        mean_dxhat_xhat /= m as f64;
                        for j in 0..m {
                            let dxhat = g[(i, j)] * gam[(0, j)];
                            dx[(i, j)] = inv_std[i] * (dxhat - mean_dxhat - normalized[(i, j)] * mean_dxhat_xhat);
                        }
                    }
                    send(*input, dx);
                    send(*gamma, dgamma);
                    send(*beta, dbeta);
                }
                Op::Gather { table, ids } => {
                    let (n, m) = self.shape(*table);
                    let mut d = Matrix::zeros(n, m);
                    for (t, &id) in ids.iter().enumerate() {
                        for (o, v) in d.row_mut(id).iter_mut().zip(g.row(t)) {
                            *o += v;
                        }
                    }
                    send(*table, d);
                }
                Op::CrossEntropy { logits, targets, smoothing, probs } => {
                    let (n, m) = probs.shape();
                    let upstream = g[(0, 0)] / n as f64;
                    let mut d = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..m {
                            let q = smoothing / m as f64 + if j == t { 1.0 - smoothing } else { 0.0 };
                            d[(i, j)] = (d[(i, j)] - q) * upstream;
                        }
                    }
                    send(*logits, d);
                }
                Op::BceWithLogits { logit, target } => {
                    let x = self.value(*logit)[(0, 0)];
                    send(*logit, Matrix::filled(1, 1, (sigmoid(x) - target) * g[(0, 0)]));
                }
            }
        }
        Ok(out)
    }
}
