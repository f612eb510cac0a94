//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every forward operation as a node; node ids are
//! handed out in topological order, so [`Graph::backward`] simply walks the
//! node list in reverse, applying each op's vector-Jacobian product and
//! accumulating adjoints by summation. One graph per forward pass; graphs
//! are single-threaded.

use crate::error::{EriError, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type NodeId = usize;

enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    /// a · bᵀ
    MatmulNT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// X (m×n) + row-broadcast bias (1×n); the only broadcast in the engine.
    AddRowBias(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    SoftmaxRows(NodeId),
    LayerNormRows {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        // saved per-row statistics for backward
        inv_std: Vec<f64>,
        xhat: Tensor,
    },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows(NodeId, usize),
    SliceCols(NodeId, usize),
    /// Mean over the rows whose mask entry is true → 1×n.
    MaskedMeanRows(NodeId, Vec<bool>),
    /// Sum of all entries → 1×1.
    Sum(NodeId),
    /// Elementwise multiply by a fixed 0 / 1/(1-p) mask.
    DropoutMask(NodeId, Tensor),
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Graph {
    nodes: Vec<Node>,
    adjoints: Vec<Option<Tensor>>,
    params: Vec<(String, NodeId)>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            adjoints: Vec::new(),
            params: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite forward value");
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Adjoint of a node after [`Graph::backward`]; `None` if the loss does
    /// not depend on it.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.adjoints.get(id).and_then(|g| g.as_ref())
    }

    /// Named trainable leaves recorded by [`Graph::param`].
    pub fn params(&self) -> &[(String, NodeId)] {
        &self.params
    }

    // ── leaves ──────────────────────────────────────────────────────

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, name: &str, value: Tensor) -> NodeId {
        let id = self.push(value, Op::Leaf);
        self.params.push((name.to_string(), id));
        id
    }

    // ── forward ops ─────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let c = self.nodes[a].value.matmul(&self.nodes[b].value)?;
        Ok(self.push(c, Op::Matmul(a, b)))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let c = self.nodes[a].value.matmul_nt(&self.nodes[b].value)?;
        Ok(self.push(c, Op::MatmulNT(a, b)))
    }

    fn binary_shapes(&self, ctx: &str, a: NodeId, b: NodeId) -> Result<()> {
        let (x, y) = (&self.nodes[a].value, &self.nodes[b].value);
        if !x.same_shape(y) {
            return Err(EriError::shape(ctx, &x.shape(), &y.shape()));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_shapes("add", a, b)?;
        let mut c = self.nodes[a].value.clone();
        c.add_assign(&self.nodes[b].value);
        Ok(self.push(c, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_shapes("sub", a, b)?;
        let x = &self.nodes[a].value;
        let y = &self.nodes[b].value;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let c = Tensor::new(x.rows(), x.cols(), data).unwrap();
        Ok(self.push(c, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_shapes("mul", a, b)?;
        let x = &self.nodes[a].value;
        let y = &self.nodes[b].value;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let c = Tensor::new(x.rows(), x.cols(), data).unwrap();
        Ok(self.push(c, Op::Mul(a, b)))
    }

    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let xv = &self.nodes[x].value;
        let bv = &self.nodes[bias].value;
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(EriError::shape("add_row_bias", &xv.shape(), &bv.shape()));
        }
        let mut c = xv.clone();
        let n = c.cols();
        for r in 0..c.rows() {
            for j in 0..n {
                let v = c.at(r, j) + bv.at(0, j);
                c.set(r, j, v);
            }
        }
        Ok(self.push(c, Op::AddRowBias(x, bias)))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.nodes[x].value.map(|a| a * c);
        self.push(v, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.nodes[x].value.map(|a| a + c);
        self.push(v, Op::AddScalar(x))
    }

    /// 1 − x, used for GRU gate mixing.
    pub fn one_minus(&mut self, x: NodeId) -> NodeId {
        let neg = self.scale(x, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x].value.map(stable_sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x].value.map(f64::tanh);
        self.push(v, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x].value.map(|a| a.max(0.0));
        self.push(v, Op::Relu(x))
    }

    /// Row-wise numerically stabilized softmax.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = &self.nodes[x].value;
        if xv.cols() == 0 || xv.rows() == 0 {
            return Err(EriError::Argument("softmax of empty input".into()));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            softmax_row_in_place(&mut out.data_mut()[r * xv.cols()..(r + 1) * xv.cols()]);
        }
        Ok(self.push(out, Op::SoftmaxRows(x)))
    }

    pub fn layer_norm_rows(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let xv = &self.nodes[x].value;
        let gv = &self.nodes[gamma].value;
        let bv = &self.nodes[beta].value;
        let d = xv.cols();
        if gv.shape() != [1, d] {
            return Err(EriError::shape("layer_norm gamma", &xv.shape(), &gv.shape()));
        }
        if bv.shape() != [1, d] {
            return Err(EriError::shape("layer_norm beta", &xv.shape(), &bv.shape()));
        }
        let mut xhat = Tensor::zeros(xv.rows(), d);
        let mut inv_std = Vec::with_capacity(xv.rows());
        let mut out = Tensor::zeros(xv.rows(), d);
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std.push(istd);
            for j in 0..d {
                let xh = (row[j] - mean) * istd;
                xhat.set(r, j, xh);
                out.set(r, j, xh * gv.at(0, j) + bv.at(0, j));
            }
        }
        Ok(self.push(
            out,
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                inv_std,
                xhat,
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(EriError::Argument("concat_rows of zero parts".into()));
        }
        let cols = self.nodes[parts[0]].value.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = &self.nodes[p].value;
            if v.cols() != cols {
                return Err(EriError::shape(
                    "concat_rows",
                    &self.nodes[parts[0]].value.shape(),
                    &v.shape(),
                ));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let t = Tensor::new(rows, cols, data).unwrap();
        Ok(self.push(t, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(EriError::Argument("concat_cols of zero parts".into()));
        }
        let rows = self.nodes[parts[0]].value.rows();
        let mut cols = 0;
        for &p in parts {
            let v = &self.nodes[p].value;
            if v.rows() != rows {
                return Err(EriError::shape(
                    "concat_cols",
                    &self.nodes[parts[0]].value.shape(),
                    &v.shape(),
                ));
            }
            cols += v.cols();
        }
        let mut t = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let v = &self.nodes[p].value;
            for r in 0..rows {
                for j in 0..v.cols() {
                    t.set(r, off + j, v.at(r, j));
                }
            }
            off += v.cols();
        }
        Ok(self.push(t, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xv = &self.nodes[x].value;
        if start + len > xv.rows() {
            return Err(EriError::Argument(format!(
                "slice_rows {}..{} out of {} rows",
                start,
                start + len,
                xv.rows()
            )));
        }
        let cols = xv.cols();
        let data = xv.data()[start * cols..(start + len) * cols].to_vec();
        let t = Tensor::new(len, cols, data).unwrap();
        Ok(self.push(t, Op::SliceRows(x, start)))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xv = &self.nodes[x].value;
        if start + len > xv.cols() {
            return Err(EriError::Argument(format!(
                "slice_cols {}..{} out of {} cols",
                start,
                start + len,
                xv.cols()
            )));
        }
        let mut t = Tensor::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            for j in 0..len {
                t.set(r, j, xv.at(r, start + j));
            }
        }
        Ok(self.push(t, Op::SliceCols(x, start)))
    }

    /// Mean of the rows marked true in `mask` → 1×cols.
    pub fn masked_mean_rows(&mut self, x: NodeId, mask: &[bool]) -> Result<NodeId> {
        let xv = &self.nodes[x].value;
        if mask.len() != xv.rows() {
            return Err(EriError::shape(
                "masked_mean_rows",
                &xv.shape(),
                &[mask.len(), 1],
            ));
        }
        let m = mask.iter().filter(|&&b| b).count();
        if m == 0 {
            return Err(EriError::Argument("masked_mean_rows: no valid rows".into()));
        }
        let mut out = Tensor::zeros(1, xv.cols());
        for (r, &keep) in mask.iter().enumerate() {
            if keep {
                for j in 0..xv.cols() {
                    let v = out.at(0, j) + xv.at(r, j);
                    out.set(0, j, v);
                }
            }
        }
        out.scale_assign(1.0 / m as f64);
        Ok(self.push(out, Op::MaskedMeanRows(x, mask.to_vec())))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.nodes[x].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Inverted dropout; identity when p == 0.
    pub fn dropout(&mut self, x: NodeId, p: f64, rng: &mut ChaCha8Rng) -> NodeId {
        if p <= 0.0 {
            return x;
        }
        let xv = &self.nodes[x].value;
        let keep = 1.0 / (1.0 - p);
        let mask_data: Vec<f64> = (0..xv.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mask = Tensor::new(xv.rows(), xv.cols(), mask_data).unwrap();
        let data = xv
            .data()
            .iter()
            .zip(mask.data())
            .map(|(a, m)| a * m)
            .collect();
        let out = Tensor::new(xv.rows(), xv.cols(), data).unwrap();
        self.push(out, Op::DropoutMask(x, mask))
    }

    // ── backward ────────────────────────────────────────────────────

    fn accum(&mut self, id: NodeId, delta: Tensor) {
        match &mut self.adjoints[id] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    /// Reverse sweep from a scalar loss node. Adjoints of multiple consumers
    /// accumulate by summation.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss].value.shape() != [1, 1] {
            return Err(EriError::Argument(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss].value.shape()
            )));
        }
        self.adjoints = vec![None; self.nodes.len()];
        self.adjoints[loss] = Some(Tensor::scalar(1.0));
        for id in (0..=loss).rev() {
            let Some(g) = self.adjoints[id].take() else {
                continue;
            };
            self.backprop_node(id, &g)?;
            self.adjoints[id] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, id: NodeId, g: &Tensor) -> Result<()> {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                let da = g.matmul_nt(&self.nodes[b].value)?;
                let db = self.nodes[a].value.matmul_tn(g)?;
                self.accum(a, da);
                self.accum(b, db);
            }
            Op::MatmulNT(a, b) => {
                let (a, b) = (*a, *b);
                let da = g.matmul(&self.nodes[b].value)?;
                let db = g.matmul_tn(&self.nodes[a].value)?;
                self.accum(a, da);
                self.accum(b, db);
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accum(a, g.clone());
                self.accum(b, g.clone());
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                self.accum(a, g.clone());
                self.accum(b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let da = hadamard(g, &self.nodes[b].value);
                let db = hadamard(g, &self.nodes[a].value);
                self.accum(a, da);
                self.accum(b, db);
            }
            Op::AddRowBias(x, bias) => {
                let (x, bias) = (*x, *bias);
                let mut db = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for j in 0..g.cols() {
                        let v = db.at(0, j) + g.at(r, j);
                        db.set(0, j, v);
                    }
                }
                self.accum(x, g.clone());
                self.accum(bias, db);
            }
            Op::Scale(x, c) => {
                let (x, c) = (*x, *c);
                self.accum(x, g.map(|v| v * c));
            }
            Op::AddScalar(x) => {
                let x = *x;
                self.accum(x, g.clone());
            }
            Op::Sigmoid(x) => {
                let x = *x;
                let y = &self.nodes[id].value;
                let data = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(gv, yv)| gv * yv * (1.0 - yv))
                    .collect();
                let dx = Tensor::new(g.rows(), g.cols(), data).unwrap();
                self.accum(x, dx);
            }
            Op::Tanh(x) => {
                let x = *x;
                let y = &self.nodes[id].value;
                let data = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(gv, yv)| gv * (1.0 - yv * yv))
                    .collect();
                let dx = Tensor::new(g.rows(), g.cols(), data).unwrap();
                self.accum(x, dx);
            }
            Op::Relu(x) => {
                let x = *x;
                let y = &self.nodes[id].value;
                let data = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(gv, yv)| if *yv > 0.0 { *gv } else { 0.0 })
                    .collect();
                let dx = Tensor::new(g.rows(), g.cols(), data).unwrap();
                self.accum(x, dx);
            }
            Op::SoftmaxRows(x) => {
                let x = *x;
                let y = &self.nodes[id].value;
                let n = y.cols();
                let mut dx = Tensor::zeros(y.rows(), n);
                for r in 0..y.rows() {
                    let dot: f64 = (0..n).map(|j| g.at(r, j) * y.at(r, j)).sum();
                    for j in 0..n {
                        dx.set(r, j, y.at(r, j) * (g.at(r, j) - dot));
                    }
                }
                self.accum(x, dx);
            }
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                inv_std,
                xhat,
            } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let gv = self.nodes[gamma].value.clone();
                let d = xhat.cols();
                let mut dx = Tensor::zeros(xhat.rows(), d);
                let mut dgamma = Tensor::zeros(1, d);
                let mut dbeta = Tensor::zeros(1, d);
                for r in 0..xhat.rows() {
                    let istd = inv_std[r];
                    let mut mean_gy = 0.0;
                    let mut mean_gyx = 0.0;
                    for j in 0..d {
                        let gy = g.at(r, j) * gv.at(0, j);
                        mean_gy += gy;
                        mean_gyx += gy * xhat.at(r, j);
                    }
                    mean_gy /= d as f64;
                    mean_gyx /= d as f64;
                    for j in 0..d {
                        let gy = g.at(r, j) * gv.at(0, j);
                        dx.set(r, j, istd * (gy - mean_gy - xhat.at(r, j) * mean_gyx));
                        let dg = dgamma.at(0, j) + g.at(r, j) * xhat.at(r, j);
                        dgamma.set(0, j, dg);
                        let db = dbeta.at(0, j) + g.at(r, j);
                        dbeta.set(0, j, db);
                    }
                }
                self.accum(x, dx);
                self.accum(gamma, dgamma);
                self.accum(beta, dbeta);
            }
            Op::ConcatRows(parts) => {
                let parts = parts.clone();
                let mut start = 0;
                for p in parts {
                    let rows = self.nodes[p].value.rows();
                    let cols = g.cols();
                    let data = g.data()[start * cols..(start + rows) * cols].to_vec();
                    self.accum(p, Tensor::new(rows, cols, data).unwrap());
                    start += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let parts = parts.clone();
                let mut start = 0;
                for p in parts {
                    let v = &self.nodes[p].value;
                    let (rows, cols) = (v.rows(), v.cols());
                    let mut dp = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        for j in 0..cols {
                            dp.set(r, j, g.at(r, start + j));
                        }
                    }
                    self.accum(p, dp);
                    start += cols;
                }
            }
            Op::SliceRows(x, start) => {
                let (x, start) = (*x, *start);
                let xv = &self.nodes[x].value;
                let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    for j in 0..g.cols() {
                        dx.set(start + r, j, g.at(r, j));
                    }
                }
                self.accum(x, dx);
            }
            Op::SliceCols(x, start) => {
                let (x, start) = (*x, *start);
                let xv = &self.nodes[x].value;
                let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    for j in 0..g.cols() {
                        dx.set(r, start + j, g.at(r, j));
                    }
                }
                self.accum(x, dx);
            }
            Op::MaskedMeanRows(x, mask) => {
                let x = *x;
                let mask = mask.clone();
                let m = mask.iter().filter(|&&b| b).count() as f64;
                let xv = &self.nodes[x].value;
                let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                for (r, keep) in mask.iter().enumerate() {
                    if *keep {
                        for j in 0..xv.cols() {
                            dx.set(r, j, g.at(0, j) / m);
                        }
                    }
                }
                self.accum(x, dx);
            }
            Op::Sum(x) => {
                let x = *x;
                let xv = &self.nodes[x].value;
                let dx = Tensor::full(xv.rows(), xv.cols(), g.item());
                self.accum(x, dx);
            }
            Op::DropoutMask(x, mask) => {
                let x = *x;
                let dx = hadamard(g, mask);
                self.accum(x, dx);
            }
        }
        Ok(())
    }
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert!(a.same_shape(b));
    let data = a.data().iter().zip(b.data()).map(|(p, q)| p * q).collect();
    Tensor::new(a.rows(), a.cols(), data).unwrap()
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_row_in_place(row: &mut [f64]) {
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
