//! Eager computation graph with reverse-mode differentiation.
//!
//! Every op computes its value when the node is created. [`Graph::gradients`]
//! emits the backward pass as ordinary nodes in the same graph, so a gradient
//! can itself be differentiated. Unrolled inner optimization loops rely on
//! this to obtain second-order meta-gradients.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Some payloads are read only by the `Debug` output.
#[allow(dead_code)]
#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    /// Tensor times a scalar node.
    MulScalar(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    /// `[m, n] + [n]`, bias broadcast over rows.
    AddBias(NodeId, NodeId),
    /// `[m, n] -> [n]`
    SumRows(NodeId),
    /// `[n] -> [m, n]`
    BroadcastRows(NodeId, usize),
    /// `[m, n] -> [m]`
    RowSum(NodeId),
    /// `[m] -> [m, n]`
    BroadcastCols(NodeId, usize),
    Sum(NodeId),
    Fill(NodeId, Vec<usize>),
    ConcatRows(Vec<NodeId>),
    SliceRows(NodeId, usize, usize),
    PadRows(NodeId, usize, usize),
    Gather(NodeId, Arc<[usize]>),
    ScatterAdd(NodeId, Arc<[usize]>, usize),
    Softmax(NodeId),
    CrossEntropy(NodeId, Arc<[usize]>),
    Reshape(NodeId, Vec<usize>),
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Leaf | Constant => Vec::new(),
            Add(a, b) | Sub(a, b) | Mul(a, b) | MulScalar(a, b) | MatMul(a, b) | AddBias(a, b) => {
                vec![*a, *b]
            }
            Scale(a, _)
            | AddScalar(a, _)
            | Transpose(a)
            | Tanh(a)
            | Relu(a)
            | SumRows(a)
            | BroadcastRows(a, _)
            | RowSum(a)
            | BroadcastCols(a, _)
            | Sum(a)
            | Fill(a, _)
            | SliceRows(a, _, _)
            | PadRows(a, _, _)
            | Gather(a, _)
            | ScatterAdd(a, _, _)
            | Softmax(a)
            | CrossEntropy(a, _)
            | Reshape(a, _) => vec![*a],
            ConcatRows(parts) => parts.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only arena of nodes. Node ids are issued in creation order, which
/// is always a topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    t.dims2().ok_or_else(|| mismatch(op, format!("expected a matrix, got shape {:?}", t.shape())))
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn elementwise(
        &mut self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
        tag: Op,
        f: fn(f64, f64) -> f64,
    ) -> Result<NodeId> {
        self.same_shape(op, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_parts(op, va.shape().to_vec(), data)?;
        Ok(self.push(value, tag))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        let value = self.value(a).map(|v| v * factor).map_err(|_| Error::NonFinite { op: "scale" })?;
        Ok(self.push(value, Op::Scale(a, factor)))
    }

    pub fn add_scalar(&mut self, a: NodeId, shift: f64) -> Result<NodeId> {
        let value = self.value(a).map(|v| v + shift).map_err(|_| Error::NonFinite { op: "add_scalar" })?;
        Ok(self.push(value, Op::AddScalar(a, shift)))
    }

    pub fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let factor = self
            .value(s)
            .item()
            .filter(|_| self.value(s).is_scalar())
            .ok_or_else(|| mismatch("mul_scalar", format!("factor must be scalar, got {:?}", self.shape(s))))?;
        let value = self.value(a).map(|v| v * factor).map_err(|_| Error::NonFinite { op: "mul_scalar" })?;
        Ok(self.push(value, Op::MulScalar(a, s)))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = dims2(self.value(a), "matmul")?;
        let (k2, n) = dims2(self.value(b), "matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = va[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &vb[p * n..(p + 1) * n];
                for (o, &y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let value = Tensor::from_parts("matmul", vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = dims2(self.value(a), "transpose")?;
        let va = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = va[i * n + j];
            }
        }
        let value = Tensor::from_parts("transpose", vec![n, m], out)?;
        Ok(self.push(value, Op::Transpose(a)))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(f64::tanh)?;
        Ok(self.push(value, Op::Tanh(a)))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|v| v.max(0.0))?;
        Ok(self.push(value, Op::Relu(a)))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = dims2(self.value(a), "add_bias")?;
        if self.shape(bias) != [n] {
            return Err(mismatch("add_bias", format!("bias {:?} for rows of width {n}", self.shape(bias))));
        }
        let (va, vb) = (self.value(a).data(), self.value(bias).data());
        let out = (0..m * n).map(|i| va[i] + vb[i % n]).collect();
        let value = Tensor::from_parts("add_bias", vec![m, n], out)?;
        Ok(self.push(value, Op::AddBias(a, bias)))
    }

    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = dims2(self.value(a), "sum_rows")?;
        let va = self.value(a).data();
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, &v) in out.iter_mut().zip(&va[i * n..(i + 1) * n]) {
                *o += v;
            }
        }
        let value = Tensor::from_parts("sum_rows", vec![n], out)?;
        Ok(self.push(value, Op::SumRows(a)))
    }

    pub fn broadcast_rows(&mut self, a: NodeId, rows: usize) -> Result<NodeId> {
        let va = self.value(a);
        if va.rank() != 1 {
            return Err(mismatch("broadcast_rows", format!("expected a vector, got {:?}", va.shape())));
        }
        let n = va.len();
        let out = (0..rows).flat_map(|_| va.data().iter().copied()).collect();
        let value = Tensor::from_parts("broadcast_rows", vec![rows, n], out)?;
        Ok(self.push(value, Op::BroadcastRows(a, rows)))
    }

    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = dims2(self.value(a), "row_sum")?;
        let va = self.value(a).data();
        let out = (0..m).map(|i| va[i * n..(i + 1) * n].iter().sum()).collect();
        let value = Tensor::from_parts("row_sum", vec![m], out)?;
        Ok(self.push(value, Op::RowSum(a)))
    }

    pub fn broadcast_cols(&mut self, a: NodeId, cols: usize) -> Result<NodeId> {
        let va = self.value(a);
        if va.rank() != 1 {
            return Err(mismatch("broadcast_cols", format!("expected a vector, got {:?}", va.shape())));
        }
        let m = va.len();
        let out = va.data().iter().flat_map(|&v| std::iter::repeat_n(v, cols)).collect();
        let value = Tensor::from_parts("broadcast_cols", vec![m, cols], out)?;
        Ok(self.push(value, Op::BroadcastCols(a, cols)))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let total = self.value(a).data().iter().sum();
        let value = Tensor::from_parts("sum", Vec::new(), vec![total])?;
        Ok(self.push(value, Op::Sum(a)))
    }

    /// Scalar node broadcast to `shape`.
    pub fn fill(&mut self, s: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(s);
        if !v.is_scalar() {
            return Err(mismatch("fill", format!("expected a scalar, got {:?}", v.shape())));
        }
        let n = shape.iter().product();
        let value = Tensor::from_parts("fill", shape.to_vec(), vec![v.data()[0]; n])?;
        Ok(self.push(value, Op::Fill(s, shape.to_vec())))
    }

    /// Mean over rows: `[m, n] -> [n]`.
    pub fn mean_pool(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, _) = dims2(self.value(a), "mean_pool")?;
        if m == 0 {
            return Err(Error::Empty("mean_pool over zero rows"));
        }
        let s = self.sum_rows(a)?;
        self.scale(s, 1.0 / m as f64)
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or(Error::Empty("concat of zero parts"))?;
        let (_, n) = dims2(self.value(first), "concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = dims2(self.value(p), "concat_rows")?;
            if c != n {
                return Err(mismatch("concat_rows", format!("column counts {n} and {c}")));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::from_parts("concat_rows", vec![rows, n], out)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = dims2(self.value(a), "slice_rows")?;
        if start + len > m {
            return Err(mismatch("slice_rows", format!("rows {start}..{} of {m}", start + len)));
        }
        let out = self.value(a).data()[start * n..(start + len) * n].to_vec();
        let value = Tensor::from_parts("slice_rows", vec![len, n], out)?;
        Ok(self.push(value, Op::SliceRows(a, start, len)))
    }

    /// Places `a` at row offset `start` inside a zero matrix of `total` rows.
    pub fn pad_rows(&mut self, a: NodeId, start: usize, total: usize) -> Result<NodeId> {
        let (r, n) = dims2(self.value(a), "pad_rows")?;
        if start + r > total {
            return Err(mismatch("pad_rows", format!("{r} rows at {start} in {total}")));
        }
        let mut out = vec![0.0; total * n];
        out[start * n..(start + r) * n].copy_from_slice(self.value(a).data());
        let value = Tensor::from_parts("pad_rows", vec![total, n], out)?;
        Ok(self.push(value, Op::PadRows(a, start, total)))
    }

    /// Embedding lookup: rows `ids` of a `[V, d]` table.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let ids: Arc<[usize]> = ids.into();
        self.gather_shared(table, ids)
    }

    fn gather_shared(&mut self, table: NodeId, ids: Arc<[usize]>) -> Result<NodeId> {
        let (v, d) = dims2(self.value(table), "gather")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(mismatch("gather", format!("id {bad} out of range for {v} rows")));
        }
        let vt = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids.iter() {
            out.extend_from_slice(vt.row(i));
        }
        let value = Tensor::from_parts("gather", vec![ids.len(), d], out)?;
        Ok(self.push(value, Op::Gather(table, ids)))
    }

    fn scatter_add(&mut self, a: NodeId, ids: Arc<[usize]>, rows: usize) -> Result<NodeId> {
        let (l, d) = dims2(self.value(a), "scatter_add")?;
        if l != ids.len() {
            return Err(mismatch("scatter_add", format!("{l} rows for {} ids", ids.len())));
        }
        let va = self.value(a).data();
        let mut out = vec![0.0; rows * d];
        for (r, &i) in ids.iter().enumerate() {
            for (o, &v) in out[i * d..(i + 1) * d].iter_mut().zip(&va[r * d..(r + 1) * d]) {
                *o += v;
            }
        }
        let value = Tensor::from_parts("scatter_add", vec![rows, d], out)?;
        Ok(self.push(value, Op::ScatterAdd(a, ids, rows)))
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = dims2(self.value(a), "softmax")?;
        let va = self.value(a).data();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            out.extend(crate::tensor::softmax_slice(&va[i * n..(i + 1) * n]));
        }
        let value = Tensor::from_parts("softmax", vec![m, n], out)?;
        Ok(self.push(value, Op::Softmax(a)))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let (b, n) = dims2(self.value(logits), "cross_entropy")?;
        if targets.len() != b {
            return Err(mismatch("cross_entropy", format!("{b} rows, {} targets", targets.len())));
        }
        if b == 0 {
            return Err(Error::Empty("cross_entropy over zero rows"));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
            return Err(mismatch("cross_entropy", format!("target {bad} out of range for {n} classes")));
        }
        let vl = self.value(logits).data();
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = &vl[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let value = Tensor::from_parts("cross_entropy", Vec::new(), vec![total / b as f64])?;
        Ok(self.push(value, Op::CrossEntropy(logits, targets.into())))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let va = self.value(a);
        if shape.iter().product::<usize>() != va.len() {
            return Err(mismatch("reshape", format!("{:?} -> {shape:?}", va.shape())));
        }
        let value = Tensor::from_parts("reshape", shape.to_vec(), va.to_vec())?;
        Ok(self.push(value, Op::Reshape(a, shape.to_vec())))
    }

    /// Scaled dot-product attention for a single head.
    ///
    /// `query` is `[m, d]`, `keys` and `values` are `[L, d]`. Returns the
    /// attended output `[m, d]` and the attention weights node `[m, L]`.
    pub fn attention(&mut self, query: NodeId, keys: NodeId, values: NodeId) -> Result<(NodeId, NodeId)> {
        let (_, d) = dims2(self.value(query), "attention")?;
        let kt = self.transpose(keys)?;
        let scores = self.matmul(query, kt)?;
        let scaled = self.scale(scores, 1.0 / (d as f64).sqrt())?;
        let weights = self.softmax(scaled)?;
        let out = self.matmul(weights, values)?;
        Ok((out, weights))
    }

    /// Gradients of the scalar `loss` with respect to each node in `wrt`.
    ///
    /// The backward pass is recorded as new nodes, so the returned gradient
    /// nodes are themselves differentiable. Nodes in `wrt` that `loss` does not
    /// depend on receive a zero constant of matching shape. Propagation stops
    /// at the `wrt` nodes: nothing upstream of them is differentiated.
    pub fn gradients(&mut self, loss: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let end = loss.0 + 1;
        // reach[i]: node i lies downstream of (or is) some wrt node.
        let mut reach = vec![false; end];
        for w in wrt {
            if w.0 < end {
                reach[w.0] = true;
            }
        }
        let start = wrt.iter().map(|w| w.0).min().unwrap_or(end);
        for i in start..end {
            if !reach[i] && self.nodes[i].op.inputs().iter().any(|p| reach[p.0]) {
                reach[i] = true;
            }
        }
        let is_target = {
            let mut t = vec![false; end];
            for w in wrt {
                if w.0 < end {
                    t[w.0] = true;
                }
            }
            t
        };

        let mut grads: Vec<Option<NodeId>> = vec![None; end];
        if reach[loss.0] {
            grads[loss.0] = Some(self.constant(Tensor::filled(&[], 1.0)));
        }
        for i in (start..end).rev() {
            let Some(g) = grads[i] else { continue };
            if is_target[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            for (input, contribution) in self.vjp(NodeId(i), &op, g, &reach)? {
                grads[input.0] = Some(match grads[input.0] {
                    None => contribution,
                    Some(existing) => self.add(existing, contribution)?,
                });
            }
        }

        wrt.iter()
            .map(|&w| match grads.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let zeros = Tensor::zeros(self.shape(w));
                    Ok(self.constant(zeros))
                }
            })
            .collect()
    }

    /// Vector-Jacobian products of one node, restricted to inputs that need a gradient.
    fn vjp(&mut self, out: NodeId, op: &Op, g: NodeId, reach: &[bool]) -> Result<Vec<(NodeId, NodeId)>> {
        let wants = |n: &NodeId| reach[n.0];
        let mut res = Vec::new();
        match op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                if wants(a) {
                    res.push((*a, g));
                }
                if wants(b) {
                    res.push((*b, g));
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    res.push((*a, g));
                }
                if wants(b) {
                    res.push((*b, self.scale(g, -1.0)?));
                }
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    res.push((*a, self.mul(g, *b)?));
                }
                if wants(b) {
                    res.push((*b, self.mul(g, *a)?));
                }
            }
            Op::Scale(a, c) => {
                if wants(a) {
                    res.push((*a, self.scale(g, *c)?));
                }
            }
            Op::AddScalar(a, _) => {
                if wants(a) {
                    res.push((*a, g));
                }
            }
            Op::MulScalar(a, s) => {
                if wants(a) {
                    res.push((*a, self.mul_scalar(g, *s)?));
                }
                if wants(s) {
                    let prod = self.mul(g, *a)?;
                    res.push((*s, self.sum(prod)?));
                }
            }
            Op::MatMul(a, b) => {
                if wants(a) {
                    let bt = self.transpose(*b)?;
                    res.push((*a, self.matmul(g, bt)?));
                }
                if wants(b) {
                    let at = self.transpose(*a)?;
                    res.push((*b, self.matmul(at, g)?));
                }
            }
            Op::Transpose(a) => {
                if wants(a) {
                    res.push((*a, self.transpose(g)?));
                }
            }
            Op::Tanh(a) => {
                if wants(a) {
                    // 1 - y^2, with y the output node
                    let sq = self.mul(out, out)?;
                    let neg = self.scale(sq, -1.0)?;
                    let deriv = self.add_scalar(neg, 1.0)?;
                    res.push((*a, self.mul(g, deriv)?));
                }
            }
            Op::Relu(a) => {
                if wants(a) {
                    // piecewise-constant mask; its own derivative is zero
                    let mask = self.value(*a).map(|v| if v > 0.0 { 1.0 } else { 0.0 })?;
                    let mask = self.constant(mask);
                    res.push((*a, self.mul(g, mask)?));
                }
            }
            Op::AddBias(a, b) => {
                if wants(a) {
                    res.push((*a, g));
                }
                if wants(b) {
                    res.push((*b, self.sum_rows(g)?));
                }
            }
            Op::SumRows(a) => {
                if wants(a) {
                    let (m, _) = dims2(self.value(*a), "sum_rows")?;
                    res.push((*a, self.broadcast_rows(g, m)?));
                }
            }
            Op::BroadcastRows(a, _) => {
                if wants(a) {
                    res.push((*a, self.sum_rows(g)?));
                }
            }
            Op::RowSum(a) => {
                if wants(a) {
                    let (_, n) = dims2(self.value(*a), "row_sum")?;
                    res.push((*a, self.broadcast_cols(g, n)?));
                }
            }
            Op::BroadcastCols(a, _) => {
                if wants(a) {
                    res.push((*a, self.row_sum(g)?));
                }
            }
            Op::Sum(a) => {
                if wants(a) {
                    let shape = self.shape(*a).to_vec();
                    res.push((*a, self.fill(g, &shape)?));
                }
            }
            Op::Fill(a, _) => {
                if wants(a) {
                    res.push((*a, self.sum(g)?));
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (r, _) = dims2(self.value(*p), "concat_rows")?;
                    if wants(p) {
                        res.push((*p, self.slice_rows(g, offset, r)?));
                    }
                    offset += r;
                }
            }
            Op::SliceRows(a, start, _) => {
                if wants(a) {
                    let (m, _) = dims2(self.value(*a), "slice_rows")?;
                    res.push((*a, self.pad_rows(g, *start, m)?));
                }
            }
            Op::PadRows(a, start, _) => {
                if wants(a) {
                    let (r, _) = dims2(self.value(*a), "pad_rows")?;
                    res.push((*a, self.slice_rows(g, *start, r)?));
                }
            }
            Op::Gather(table, ids) => {
                if wants(table) {
                    let (v, _) = dims2(self.value(*table), "gather")?;
                    res.push((*table, self.scatter_add(g, ids.clone(), v)?));
                }
            }
            Op::ScatterAdd(a, ids, _) => {
                if wants(a) {
                    res.push((*a, self.gather_shared(g, ids.clone())?));
                }
            }
            Op::Softmax(a) => {
                if wants(a) {
                    // y * (g - rowsum(g * y))
                    let (_, n) = dims2(self.value(out), "softmax")?;
                    let gy = self.mul(g, out)?;
                    let dot = self.row_sum(gy)?;
                    let dot = self.broadcast_cols(dot, n)?;
                    let centered = self.sub(g, dot)?;
                    res.push((*a, self.mul(out, centered)?));
                }
            }
            Op::CrossEntropy(logits, targets) => {
                if wants(logits) {
                    // (softmax(logits) - onehot) * g / B
                    let (b, n) = dims2(self.value(*logits), "cross_entropy")?;
                    let mut onehot = vec![0.0; b * n];
                    for (i, &t) in targets.iter().enumerate() {
                        onehot[i * n + t] = 1.0;
                    }
                    let onehot = self.constant(Tensor::from_parts("cross_entropy", vec![b, n], onehot)?);
                    let probs = self.softmax(*logits)?;
                    let diff = self.sub(probs, onehot)?;
                    let weighted = self.mul_scalar(diff, g)?;
                    res.push((*logits, self.scale(weighted, 1.0 / b as f64)?));
                }
            }
            Op::Reshape(a, _) => {
                if wants(a) {
                    let shape = self.shape(*a).to_vec();
                    res.push((*a, self.reshape(g, &shape)?));
                }
            }
        }
        Ok(res)
    }
}
