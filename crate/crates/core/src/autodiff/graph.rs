//! Define-by-run computation record with reverse-mode gradients.
//!
//! Every operation appends a node holding its forward value. Insertion order
//! is a topological order, so `backward` simply walks the node list in
//! reverse, accumulating adjoints into per-node buffers.

use super::kernels;
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Tanh(NodeId),
    Softplus(NodeId),
    Sum(NodeId),
    SliceRows(NodeId, usize),
    ConcatRows(Vec<NodeId>),
    ConcatCols(NodeId, NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    KlUniformProbs(NodeId),
    KlUniformLogits(NodeId),
    CrossEntropy(NodeId, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of primitive operations and their adjoints.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
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

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Adjoint of `id` after the last `backward`, if it was reached.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Adjoint of `id`, or zeros shaped like its value when unreached.
    pub fn grad_or_zeros(&self, id: NodeId) -> Tensor {
        self.grad(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(id).shape().to_vec()))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), value, rg))
    }

    /// Adds a length-`cols` bias to every row of `a`.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (r, c) = self.value(a).dims();
        let b = self.value(bias);
        if b.len() != c {
            return Err(Error::shape(
                "add_bias",
                format!("input has {} columns, bias has {} values", c, b.len()),
            ));
        }
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(c.max(1)) {
            for (o, bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let value = Tensor::new(vec![r, c], out)?;
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(Op::AddBias(a, bias), value, rg))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    fn zip_with(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let value = self.zip_with(a, b, |p, q| p + q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_with(a, b, |p, q| p - q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Sub(a, b), value, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_with(a, b, |p, q| p * q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), value, rg))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let value = self.value(a).map(|v| v * s);
        let rg = self.rg(a);
        self.push(Op::Scale(a, s), value, rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(a);
        self.push(Op::Relu(a), value, rg)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(a);
        self.push(Op::LeakyRelu(a, slope), value, rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(Op::Tanh(a), value, rg)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(kernels::softplus);
        let rg = self.rg(a);
        self.push(Op::Softplus(a), value, rg)
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(Op::Sum(a), value, rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let rows = self.value(a).rows();
        if start > end || end > rows {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {}..{} of a {}-row input", start, end, rows),
            ));
        }
        let value = self.value(a).slice_rows(start, end);
        let rg = self.rg(a);
        Ok(self.push(Op::SliceRows(a, start), value, rg))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let cols = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::shape(
                    "concat_rows",
                    format!("column counts {} and {}", cols, v.cols()),
                ));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let value = Tensor::new(vec![rows, cols], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Op::ConcatRows(parts.to_vec()), value, rg))
    }

    /// Places `b`'s columns to the right of `a`'s.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ra, ca) = self.value(a).dims();
        let (rb, cb) = self.value(b).dims();
        if ra != rb {
            return Err(Error::shape(
                "concat_cols",
                format!("row counts {} and {}", ra, rb),
            ));
        }
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            data.extend_from_slice(self.value(a).row(i));
            data.extend_from_slice(self.value(b).row(i));
        }
        let value = Tensor::new(vec![ra, ca + cb], data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::ConcatCols(a, b), value, rg))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let value = kernels::rowwise(self.value(a), kernels::softmax);
        let rg = self.rg(a);
        self.push(Op::Softmax(a), value, rg)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let value = kernels::rowwise(self.value(a), kernels::log_softmax);
        let rg = self.rg(a);
        self.push(Op::LogSoftmax(a), value, rg)
    }

    /// Row-wise `KL(p || uniform)` of probability rows; returns a column.
    pub fn kl_uniform_probs(&mut self, probs: NodeId) -> NodeId {
        let v = self.value(probs);
        let data: Vec<f64> = v.row_iter().map(kernels::kl_to_uniform).collect();
        let value = Tensor::new(vec![data.len(), 1], data).expect("column");
        let rg = self.rg(probs);
        self.push(Op::KlUniformProbs(probs), value, rg)
    }

    /// Row-wise `KL(softmax(z) || uniform)` computed in log space; returns a column.
    pub fn kl_uniform_logits(&mut self, logits: NodeId) -> NodeId {
        let v = self.value(logits);
        let data: Vec<f64> = v.row_iter().map(kernels::kl_uniform_from_logits).collect();
        let value = Tensor::new(vec![data.len(), 1], data).expect("column");
        let rg = self.rg(logits);
        self.push(Op::KlUniformLogits(logits), value, rg)
    }

    /// Row-wise cross-entropy `-log softmax(z)[target]`; returns a column.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let v = self.value(logits);
        let (r, c) = v.dims();
        if targets.len() != r {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} rows but {} targets", r, targets.len()),
            ));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::invalid(format!(
                "cross_entropy target {} out of range for {} classes",
                t, c
            )));
        }
        let data: Vec<f64> = v
            .row_iter()
            .zip(targets)
            .map(|(row, &t)| kernels::cross_entropy(row, t))
            .collect();
        let value = Tensor::new(vec![r, 1], data)?;
        let rg = self.rg(logits);
        Ok(self.push(Op::CrossEntropy(logits, targets.to_vec()), value, rg))
    }

    /// Reverse pass from a single-element `root`.
    ///
    /// Adjoint buffers are cleared first, so repeated calls on the same graph
    /// produce identical gradients.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be a scalar, got shape {:?}", self.value(root).shape()),
            ));
        }
        self.grads.clear();
        self.grads.resize_with(self.nodes.len(), || None);
        self.grads[root.0] = Some(Tensor::full(self.value(root).shape().to_vec(), 1.0));

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(upstream) = self.grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &upstream);
            self.grads[idx] = Some(upstream);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let shape = self.nodes[id.0].value.shape().to_vec();
        let slot = self.grads[id.0].get_or_insert_with(|| Tensor::zeros(shape));
        f(slot.data_mut());
    }

    fn accumulate_elementwise(&mut self, id: NodeId, g: &[f64], f: impl Fn(usize, f64) -> f64) {
        self.accumulate(id, |buf| {
            for (i, (b, &gi)) in buf.iter_mut().zip(g).enumerate() {
                *b += f(i, gi);
            }
        });
    }

    fn propagate(&mut self, idx: usize, up: &Tensor) {
        let op = self.nodes[idx].op.clone();
        let g = up.data();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(a).dims();
                let n = self.value(b).cols();
                if self.rg(a) {
                    // dA = dC * B^T
                    let bv = self.value(b).data().to_vec();
                    self.accumulate(a, |buf| {
                        gemm(m, n, k, g, n as isize, 1, &bv, 1, n as isize, buf, 1.0)
                    });
                }
                if self.rg(b) {
                    // dB = A^T * dC
                    let av = self.value(a).data().to_vec();
                    self.accumulate(b, |buf| {
                        gemm(k, m, n, &av, 1, k as isize, g, n as isize, 1, buf, 1.0)
                    });
                }
            }
            Op::AddBias(a, bias) => {
                self.accumulate_elementwise(a, g, |_, gi| gi);
                let c = self.value(bias).len();
                self.accumulate(bias, |buf| {
                    for row in g.chunks(c.max(1)) {
                        for (b, gi) in buf.iter_mut().zip(row) {
                            *b += gi;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate_elementwise(a, g, |_, gi| gi);
                self.accumulate_elementwise(b, g, |_, gi| gi);
            }
            Op::Sub(a, b) => {
                self.accumulate_elementwise(a, g, |_, gi| gi);
                self.accumulate_elementwise(b, g, |_, gi| -gi);
            }
            Op::Mul(a, b) => {
                let av = self.value(a).data().to_vec();
                let bv = self.value(b).data().to_vec();
                self.accumulate_elementwise(a, g, |i, gi| gi * bv[i]);
                self.accumulate_elementwise(b, g, |i, gi| gi * av[i]);
            }
            Op::Scale(a, s) => self.accumulate_elementwise(a, g, |_, gi| gi * s),
            Op::Relu(a) => {
                let x = self.value(a).data().to_vec();
                self.accumulate_elementwise(a, g, |i, gi| if x[i] > 0.0 { gi } else { 0.0 });
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(a).data().to_vec();
                self.accumulate_elementwise(a, g, |i, gi| if x[i] > 0.0 { gi } else { slope * gi });
            }
            Op::Tanh(a) => {
                let y = self.nodes[idx].value.data().to_vec();
                self.accumulate_elementwise(a, g, |i, gi| gi * (1.0 - y[i] * y[i]));
            }
            Op::Softplus(a) => {
                let x = self.value(a).data().to_vec();
                self.accumulate_elementwise(a, g, |i, gi| gi * kernels::sigmoid(x[i]));
            }
            Op::Sum(a) => {
                let gi = g[0];
                self.accumulate(a, |buf| buf.iter_mut().for_each(|b| *b += gi));
            }
            Op::SliceRows(a, start) => {
                let c = self.value(a).cols();
                self.accumulate(a, |buf| {
                    for (b, gi) in buf[start * c..start * c + g.len()].iter_mut().zip(g) {
                        *b += gi;
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(p).len();
                    let seg = &g[offset..offset + n];
                    self.accumulate_elementwise(p, seg, |_, gi| gi);
                    offset += n;
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(a).cols();
                let cb = self.value(b).cols();
                let w = ca + cb;
                self.accumulate(a, |buf| {
                    for (r, row) in buf.chunks_mut(ca.max(1)).enumerate() {
                        for (j, v) in row.iter_mut().enumerate() {
                            *v += g[r * w + j];
                        }
                    }
                });
                self.accumulate(b, |buf| {
                    for (r, row) in buf.chunks_mut(cb.max(1)).enumerate() {
                        for (j, v) in row.iter_mut().enumerate() {
                            *v += g[r * w + ca + j];
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let y = self.nodes[idx].value.clone();
                let c = y.cols();
                self.accumulate(a, |buf| {
                    for ((brow, yrow), grow) in buf
                        .chunks_mut(c)
                        .zip(y.data().chunks(c))
                        .zip(g.chunks(c))
                    {
                        let dot: f64 = yrow.iter().zip(grow).map(|(p, q)| p * q).sum();
                        for j in 0..c {
                            brow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let y = self.nodes[idx].value.clone();
                let c = y.cols();
                self.accumulate(a, |buf| {
                    for ((brow, yrow), grow) in buf
                        .chunks_mut(c)
                        .zip(y.data().chunks(c))
                        .zip(g.chunks(c))
                    {
                        let gsum: f64 = grow.iter().sum();
                        for j in 0..c {
                            brow[j] += grow[j] - yrow[j].exp() * gsum;
                        }
                    }
                });
            }
            Op::KlUniformProbs(a) => {
                let x = self.value(a).clone();
                let c = x.cols();
                let n = c as f64;
                self.accumulate(a, |buf| {
                    for ((brow, prow), &gi) in buf.chunks_mut(c).zip(x.data().chunks(c)).zip(g) {
                        for j in 0..c {
                            // d/dp [p ln(p n)] = ln(p n) + 1; the 0 ln 0 convention
                            // leaves the derivative unbounded at p = 0, clamp to ln(tiny).
                            let p = prow[j].max(f64::MIN_POSITIVE);
                            brow[j] += gi * ((p * n).ln() + 1.0);
                        }
                    }
                });
            }
            Op::KlUniformLogits(a) => {
                let z = self.value(a).clone();
                let c = z.cols();
                self.accumulate(a, |buf| {
                    for ((brow, zrow), &gi) in buf.chunks_mut(c).zip(z.data().chunks(c)).zip(g) {
                        let logp = kernels::log_softmax(zrow);
                        let mean_logp: f64 = logp.iter().map(|l| l.exp() * l).sum();
                        for j in 0..c {
                            brow[j] += gi * logp[j].exp() * (logp[j] - mean_logp);
                        }
                    }
                });
            }
            Op::CrossEntropy(a, targets) => {
                let z = self.value(a).clone();
                let c = z.cols();
                self.accumulate(a, |buf| {
                    for (((brow, zrow), &gi), &t) in buf
                        .chunks_mut(c)
                        .zip(z.data().chunks(c))
                        .zip(g)
                        .zip(&targets)
                    {
                        let p = kernels::softmax(zrow);
                        for j in 0..c {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            brow[j] += gi * (p[j] - onehot);
                        }
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_of_product() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![3.0]));
        let y = g.mul(x, x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let p = g.param(Tensor::vector(vec![0.5, 0.5]));
        let m = g.mul(c, p).unwrap();
        let s = g.sum(m);
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(p).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut g = Graph::new();
        let p = g.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(g.backward(p).is_err());
    }

    #[test]
    fn repeated_backward_is_bit_identical() {
        let mut g = Graph::new();
        let a = g.param(Tensor::matrix(2, 2, vec![0.3, -1.2, 2.0, 0.7]).unwrap());
        let b = g.param(Tensor::matrix(2, 3, vec![0.1, 0.2, -0.3, 0.4, -0.5, 0.6]).unwrap());
        let m = g.matmul(a, b).unwrap();
        let t = g.tanh(m);
        let ce = g.cross_entropy(t, &[2, 0]).unwrap();
        let s = g.sum(ce);
        g.backward(s).unwrap();
        let first = (g.grad(a).unwrap().clone(), g.grad(b).unwrap().clone());
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), first.0.data());
        assert_eq!(g.grad(b).unwrap().data(), first.1.data());
    }

    #[test]
    fn concat_and_slice_route_gradients() {
        let mut g = Graph::new();
        let a = g.param(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let b = g.constant(Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = g.concat_rows(&[a, b]).unwrap();
        let s = g.slice_rows(c, 0, 2).unwrap();
        let sq = g.mul(s, s).unwrap();
        let total = g.sum(sq);
        g.backward(total).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[2.0, 4.0]);
    }
}
