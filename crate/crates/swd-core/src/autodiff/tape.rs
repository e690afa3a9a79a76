//! Wengert tape: ops record themselves in creation order, backward
//! replays them in strict reverse creation order exactly once.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::tensor::{ensure_finite, matmul_raw, Tensor};
use crate::error::{Error, Result};

/// Handle of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// Recorded operation with the input handles and saved context needed
/// for the backward rule.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    AddBias { x: NodeId, bias: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, factor: f64 },
    Relu { x: NodeId },
    Abs { x: NodeId },
    Softmax { x: NodeId },
    SoftmaxCrossEntropyMean { logits: NodeId, labels: Vec<usize> },
    Gather { x: NodeId, perm: Vec<usize> },
    Reshape { x: NodeId },
    Transpose { x: NodeId },
    RowSlice { x: NodeId, row: usize },
    SumAll { x: NodeId },
    GradReverse { x: NodeId, lambda: f64 },
}

struct Node {
    tensor: Tensor,
    op: Op,
}

/// Reverse-mode tape over [`Tensor`] values.
///
/// Rebuilt per forward pass (define-by-run). Gradients accumulate
/// additively, so a node consumed twice receives the sum of both
/// contributions; nodes unreachable from the loss keep zero grad.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a tensor as a leaf node and returns its handle.
    pub fn leaf(&mut self, mut tensor: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        tensor.set_tape_id(id);
        tensor.clear_grad();
        self.nodes.push(Node {
            tensor,
            op: Op::Leaf,
        });
        id
    }

    fn push(
        &mut self,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        op: Op,
        requires_grad: bool,
        context: &str,
    ) -> Result<NodeId> {
        ensure_finite(&data, context)?;
        let id = NodeId(self.nodes.len());
        let mut tensor = Tensor::new(rows, cols, data)?;
        if requires_grad {
            tensor = tensor.requiring_grad();
        }
        tensor.set_tape_id(id);
        self.nodes.push(Node { tensor, op });
        Ok(id)
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.node(id).tensor
    }

    pub fn values(&self, id: NodeId) -> &[f64] {
        self.node(id).tensor.values()
    }

    /// Single entry of a 1×1 node.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        self.node(id).tensor.item()
    }

    /// Gradient of a node; `None` before any backward pass.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.node(id).tensor.grad()
    }

    fn needs_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.node(*id).tensor.requires_grad())
    }

    // ── Forward ops ──────────────────────────────────────────────────

    /// Matrix product: `a` is n×k, `b` is k×m.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, ka) = self.node(a).tensor.shape();
        let (kb, m) = self.node(b).tensor.shape();
        if ka != kb {
            return Err(Error::Shape(format!(
                "matmul inner dimensions disagree: {n}x{ka} times {kb}x{m}"
            )));
        }
        let data = matmul_raw(
            self.node(a).tensor.values(),
            self.node(b).tensor.values(),
            n,
            ka,
            m,
        );
        let rg = self.needs_grad(&[a, b]);
        self.push(n, m, data, Op::MatMul { a, b }, rg, "matmul")
    }

    /// Row-wise broadcast addition of a 1×m bias to an n×m tensor.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (n, m) = self.node(x).tensor.shape();
        let (brows, bcols) = self.node(bias).tensor.shape();
        if brows != 1 || bcols != m {
            return Err(Error::Shape(format!(
                "add_bias needs a 1x{m} bias, got {brows}x{bcols}"
            )));
        }
        let xv = self.node(x).tensor.values();
        let bv = self.node(bias).tensor.values();
        let mut data = Vec::with_capacity(n * m);
        for r in 0..n {
            for c in 0..m {
                data.push(xv[r * m + c] + bv[c]);
            }
        }
        let rg = self.needs_grad(&[x, bias]);
        self.push(n, m, data, Op::AddBias { x, bias }, rg, "add_bias")
    }

    fn elementwise_pair(
        &mut self,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
        context: &str,
    ) -> Result<NodeId> {
        let (ra, ca) = self.node(a).tensor.shape();
        let (rb, cb) = self.node(b).tensor.shape();
        if (ra, ca) != (rb, cb) {
            return Err(Error::Shape(format!(
                "{context} needs equal shapes, got {ra}x{ca} and {rb}x{cb}"
            )));
        }
        let data: Vec<f64> = self
            .node(a)
            .tensor
            .values()
            .iter()
            .zip(self.node(b).tensor.values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.needs_grad(&[a, b]);
        self.push(ra, ca, data, op, rg, context)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise_pair(a, b, |x, y| x + y, Op::Add { a, b }, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise_pair(a, b, |x, y| x - y, Op::Sub { a, b }, "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise_pair(a, b, |x, y| x * y, Op::Mul { a, b }, "mul")
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        if !factor.is_finite() {
            return Err(Error::Argument("scale factor must be finite".into()));
        }
        let (r, c) = self.node(x).tensor.shape();
        let data: Vec<f64> = self.node(x).tensor.values().iter().map(|&v| v * factor).collect();
        let rg = self.needs_grad(&[x]);
        self.push(r, c, data, Op::Scale { x, factor }, rg, "scale")
    }

    /// Elementwise max(x, 0). Subgradient at exactly 0 is fixed to 0.
    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.node(x).tensor.shape();
        let data: Vec<f64> = self
            .node(x)
            .tensor
            .values()
            .iter()
            .map(|&v| if v > 0.0 { v } else { 0.0 })
            .collect();
        let rg = self.needs_grad(&[x]);
        self.push(r, c, data, Op::Relu { x }, rg, "relu")
    }

    /// Elementwise |x|. Subgradient at exactly 0 is fixed to 0.
    pub fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.node(x).tensor.shape();
        let data: Vec<f64> = self
            .node(x)
            .tensor
            .values()
            .iter()
            .map(|&v| if v < 0.0 { -v } else { v })
            .collect();
        let rg = self.needs_grad(&[x]);
        self.push(r, c, data, Op::Abs { x }, rg, "abs")
    }

    /// Row-wise softmax, stabilized by row-max subtraction.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, k) = self.node(x).tensor.shape();
        let xv = self.node(x).tensor.values();
        let mut data = vec![0.0; n * k];
        for r in 0..n {
            softmax_row(&xv[r * k..(r + 1) * k], &mut data[r * k..(r + 1) * k]);
        }
        let rg = self.needs_grad(&[x]);
        self.push(n, k, data, Op::Softmax { x }, rg, "softmax")
    }

    /// Mean over rows of −log softmax(logits)[label], stabilized by
    /// row-max subtraction. Backward is (softmax − onehot)/n.
    pub fn softmax_cross_entropy_mean(
        &mut self,
        logits: NodeId,
        labels: &[usize],
    ) -> Result<NodeId> {
        let (n, k) = self.node(logits).tensor.shape();
        if labels.len() != n {
            return Err(Error::Shape(format!(
                "{} labels for {n} logit rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Index(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let xv = self.node(logits).tensor.values();
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &xv[r * k..(r + 1) * k];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let log_sum: f64 = row.iter().map(|&v| exp(v - max)).sum::<f64>();
            total -= row[label] - max - ln(log_sum);
        }
        let loss = total / n as f64;
        let rg = self.needs_grad(&[logits]);
        self.push(
            1,
            1,
            vec![loss],
            Op::SoftmaxCrossEntropyMean {
                logits,
                labels: labels.to_vec(),
            },
            rg,
            "softmax_cross_entropy_mean",
        )
    }

    /// Stable ascending argsort of a 1×N node's values.
    ///
    /// Non-differentiable: the permutation is a constant of the
    /// backward pass. Errors if a NaN is present.
    pub fn sort_permutation(&self, x: NodeId) -> Result<Vec<usize>> {
        let t = &self.node(x).tensor;
        if t.rows() != 1 {
            return Err(Error::Shape(format!(
                "sort_permutation needs a 1xN tensor, got {}x{}",
                t.rows(),
                t.cols()
            )));
        }
        sort_permutation(t.values())
    }

    /// Reorders a 1×N node by a permutation: `out[j] = x[perm[j]]`.
    /// Backward scatters the gradient through the inverse permutation.
    pub fn gather(&mut self, x: NodeId, perm: &[usize]) -> Result<NodeId> {
        let (r, n) = self.node(x).tensor.shape();
        if r != 1 {
            return Err(Error::Shape(format!(
                "gather needs a 1xN tensor, got {r}x{n}"
            )));
        }
        validate_permutation(perm, n)?;
        let xv = self.node(x).tensor.values();
        let data: Vec<f64> = perm.iter().map(|&p| xv[p]).collect();
        let rg = self.needs_grad(&[x]);
        self.push(
            1,
            n,
            data,
            Op::Gather {
                x,
                perm: perm.to_vec(),
            },
            rg,
            "gather",
        )
    }

    /// Reinterprets the row-major buffer under a new shape.
    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let t = &self.node(x).tensor;
        if rows * cols != t.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {}x{} into {rows}x{cols}",
                t.rows(),
                t.cols()
            )));
        }
        let data = t.values().to_vec();
        let rg = self.needs_grad(&[x]);
        self.push(rows, cols, data, Op::Reshape { x }, rg, "reshape")
    }

    /// Matrix transpose.
    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.node(x).tensor.shape();
        let data = transpose(self.node(x).tensor.values(), r, c);
        let rg = self.needs_grad(&[x]);
        self.push(c, r, data, Op::Transpose { x }, rg, "transpose")
    }

    /// Copies one row of an n×m node out as a 1×m node.
    pub fn row_slice(&mut self, x: NodeId, row: usize) -> Result<NodeId> {
        let (n, m) = self.node(x).tensor.shape();
        if row >= n {
            return Err(Error::Index(format!("row {row} out of range for {n} rows")));
        }
        let data = self.node(x).tensor.row(row).to_vec();
        let rg = self.needs_grad(&[x]);
        self.push(1, m, data, Op::RowSlice { x, row }, rg, "row_slice")
    }

    /// Sum of all entries, as a 1×1 node.
    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let total: f64 = self.node(x).tensor.values().iter().sum();
        let rg = self.needs_grad(&[x]);
        self.push(1, 1, vec![total], Op::SumAll { x }, rg, "sum_all")
    }

    /// Identity forward; backward multiplies the upstream gradient by
    /// −lambda.
    pub fn grad_reverse(&mut self, x: NodeId, lambda: f64) -> Result<NodeId> {
        if !lambda.is_finite() {
            return Err(Error::Argument("grad_reverse lambda must be finite".into()));
        }
        let (r, c) = self.node(x).tensor.shape();
        let data = self.node(x).tensor.values().to_vec();
        let rg = self.needs_grad(&[x]);
        self.push(r, c, data, Op::GradReverse { x, lambda }, rg, "grad_reverse")
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss: seeds gradient 1.0 at `loss`,
    /// visits nodes in reverse creation order exactly once, and
    /// accumulates gradients additively into every node.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.node(loss).tensor.len() != 1 {
            let (r, c) = self.node(loss).tensor.shape();
            return Err(Error::Shape(format!(
                "backward needs a 1x1 loss, got {r}x{c}"
            )));
        }
        for node in &mut self.nodes {
            node.tensor.clear_grad();
            node.tensor.ensure_grad();
        }
        self.nodes[loss.0].tensor.ensure_grad()[0] = 1.0;

        for i in (0..=loss.0).rev() {
            let g = self.nodes[i].tensor.grad().unwrap().to_vec();
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (n, k) = self.node(a).tensor.shape();
                    let m = self.node(b).tensor.cols();
                    // dA = dC · Bᵀ
                    let bt = transpose(self.node(b).tensor.values(), k, m);
                    let da = matmul_raw(&g, &bt, n, m, k);
                    // dB = Aᵀ · dC
                    let at = transpose(self.node(a).tensor.values(), n, k);
                    let db = matmul_raw(&at, &g, k, n, m);
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::AddBias { x, bias } => {
                    let (n, m) = self.node(x).tensor.shape();
                    self.accumulate(x, &g);
                    let mut db = vec![0.0; m];
                    for r in 0..n {
                        for c in 0..m {
                            db[c] += g[r * m + c];
                        }
                    }
                    self.accumulate(bias, &db);
                }
                Op::Add { a, b } => {
                    self.accumulate(a, &g);
                    self.accumulate(b, &g);
                }
                Op::Sub { a, b } => {
                    self.accumulate(a, &g);
                    let neg: Vec<f64> = g.iter().map(|&v| -v).collect();
                    self.accumulate(b, &neg);
                }
                Op::Mul { a, b } => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.node(b).tensor.values())
                        .map(|(&gv, &bv)| gv * bv)
                        .collect();
                    let db: Vec<f64> = g
                        .iter()
                        .zip(self.node(a).tensor.values())
                        .map(|(&gv, &av)| gv * av)
                        .collect();
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::Scale { x, factor } => {
                    let dx: Vec<f64> = g.iter().map(|&v| v * factor).collect();
                    self.accumulate(x, &dx);
                }
                Op::Relu { x } => {
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(self.node(x).tensor.values())
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect();
                    self.accumulate(x, &dx);
                }
                Op::Abs { x } => {
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(self.node(x).tensor.values())
                        .map(|(&gv, &xv)| {
                            if xv > 0.0 {
                                gv
                            } else if xv < 0.0 {
                                -gv
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    self.accumulate(x, &dx);
                }
                Op::Softmax { x } => {
                    // Per row: dx_j = s_j (g_j − Σ_i g_i s_i)
                    let (n, k) = self.node(i_id(i)).tensor.shape();
                    let s = self.node(i_id(i)).tensor.values();
                    let mut dx = vec![0.0; n * k];
                    for r in 0..n {
                        let srow = &s[r * k..(r + 1) * k];
                        let grow = &g[r * k..(r + 1) * k];
                        let dot: f64 = srow.iter().zip(grow).map(|(&sv, &gv)| sv * gv).sum();
                        for c in 0..k {
                            dx[r * k + c] = srow[c] * (grow[c] - dot);
                        }
                    }
                    self.accumulate(x, &dx);
                }
                Op::SoftmaxCrossEntropyMean { logits, labels } => {
                    let (n, k) = self.node(logits).tensor.shape();
                    let xv = self.node(logits).tensor.values();
                    let g0 = g[0];
                    let mut dx = vec![0.0; n * k];
                    for (r, &label) in labels.iter().enumerate() {
                        let row = &xv[r * k..(r + 1) * k];
                        softmax_row(row, &mut dx[r * k..(r + 1) * k]);
                        dx[r * k + label] -= 1.0;
                        for c in 0..k {
                            dx[r * k + c] *= g0 / n as f64;
                        }
                    }
                    self.accumulate(logits, &dx);
                }
                Op::Gather { x, perm } => {
                    let mut dx = vec![0.0; g.len()];
                    for (j, &p) in perm.iter().enumerate() {
                        dx[p] += g[j];
                    }
                    self.accumulate(x, &dx);
                }
                Op::Reshape { x } => {
                    self.accumulate(x, &g);
                }
                Op::Transpose { x } => {
                    let (r, c) = self.node(i_id(i)).tensor.shape();
                    let dx = transpose(&g, r, c);
                    self.accumulate(x, &dx);
                }
                Op::RowSlice { x, row } => {
                    let m = self.node(i_id(i)).tensor.cols();
                    let mut dx = vec![0.0; self.node(x).tensor.len()];
                    dx[row * m..(row + 1) * m].copy_from_slice(&g);
                    self.accumulate(x, &dx);
                }
                Op::SumAll { x } => {
                    let dx = vec![g[0]; self.node(x).tensor.len()];
                    self.accumulate(x, &dx);
                }
                Op::GradReverse { x, lambda } => {
                    let dx: Vec<f64> = g.iter().map(|&v| -lambda * v).collect();
                    self.accumulate(x, &dx);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, contribution: &[f64]) {
        let grad = self.nodes[id.0].tensor.ensure_grad();
        for (dst, &src) in grad.iter_mut().zip(contribution) {
            *dst += src;
        }
    }
}

fn i_id(i: usize) -> NodeId {
    NodeId(i)
}

fn transpose(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        let e = exp(v - max);
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn exp(x: f64) -> f64 {
    num_traits::Float::exp(x)
}

fn ln(x: f64) -> f64 {
    num_traits::Float::ln(x)
}

fn validate_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::Index(format!(
            "permutation length {} does not match {n}",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::Index(format!("invalid permutation entry {p}")));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Stable ascending argsort: returns indices `alpha` with
/// `values[alpha[j]] <= values[alpha[j+1]]`, ties broken by ascending
/// original index. Errors if a NaN is present.
pub fn sort_permutation(values: &[f64]) -> Result<Vec<usize>> {
    if values.is_empty() {
        return Err(Error::Argument("sort_permutation needs at least one value".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("sort_permutation input contains NaN".into()));
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn row(values: &[f64]) -> Tensor {
        Tensor::row_vector(values.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_analytic() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let eye = tape.leaf(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let c = tape.matmul(a, eye).unwrap();
        assert_eq!(tape.values(c), &[1.0, 2.0, 3.0, 4.0]);

        let u = tape.leaf(row(&[1.0, 2.0]));
        let v = tape.leaf(Tensor::new(2, 1, vec![3.0, 4.0]).unwrap());
        let s = tape.matmul(u, v).unwrap();
        assert_eq!(tape.scalar(s).unwrap(), 11.0);
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::zeros(2, 3));
        assert!(matches!(tape.matmul(a, b), Err(Error::Shape(_))));
    }

    #[test]
    fn add_bias_broadcasts_rows() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(row(&[1.0, 2.0, 3.0]));
        let out = tape.add_bias(x, b).unwrap();
        assert_eq!(tape.values(out), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);

        let x2 = tape.leaf(row(&[5.0, 6.0, 7.0]));
        let zero = tape.leaf(Tensor::zeros(1, 3));
        let same = tape.add_bias(x2, zero).unwrap();
        assert_eq!(tape.values(same), tape.values(x2));
    }

    #[test]
    fn relu_clamps_and_zeroes_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(row(&[-1.0, 0.0, 2.0]).requiring_grad());
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.values(y), &[0.0, 0.0, 2.0]);
        let s = tape.sum_all(y).unwrap();
        tape.backward(s).unwrap();
        // Subgradient at exactly 0 is 0.
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.leaf(row(&[-3.0, -0.5]).requiring_grad());
        let y = tape.relu(x).unwrap();
        let s = tape.sum_all(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.values(y), &[0.0, 0.0]);
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln2() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(3, 2));
        let loss = tape.softmax_cross_entropy_mean(logits, &[0, 1, 0]).unwrap();
        let expected = num_traits::Float::ln(2.0f64);
        assert!((tape.scalar(loss).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_saturated_does_not_overflow() {
        let mut tape = Tape::new();
        let logits = tape.leaf(row(&[1000.0, 0.0]));
        let loss = tape.softmax_cross_entropy_mean(logits, &[0]).unwrap();
        assert!(tape.scalar(loss).unwrap() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(1, 2));
        assert!(matches!(
            tape.softmax_cross_entropy_mean(logits, &[2]),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn sort_permutation_is_stable() {
        assert_eq!(sort_permutation(&[3.0, 1.0, 2.0]).unwrap(), vec![1, 2, 0]);
        assert_eq!(sort_permutation(&[1.0, 2.0, 3.0]).unwrap(), vec![0, 1, 2]);
        assert_eq!(sort_permutation(&[5.0, 5.0, 1.0]).unwrap(), vec![2, 0, 1]);
        assert!(matches!(
            sort_permutation(&[1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn gather_applies_permutation() {
        let mut tape = Tape::new();
        let x = tape.leaf(row(&[3.0, 1.0, 2.0]));
        let y = tape.gather(x, &[1, 2, 0]).unwrap();
        assert_eq!(tape.values(y), &[1.0, 2.0, 3.0]);
        let same = tape.gather(x, &[0, 1, 2]).unwrap();
        assert_eq!(tape.values(same), tape.values(x));
        assert!(matches!(tape.gather(x, &[0, 0, 2]), Err(Error::Index(_))));
        assert!(matches!(tape.gather(x, &[0, 1]), Err(Error::Index(_))));
    }

    #[test]
    fn grad_reverse_forward_is_identity() {
        let mut tape = Tape::new();
        let x = tape.leaf(row(&[1.5, -2.5, 0.0]).requiring_grad());
        let y = tape.grad_reverse(x, 1.0).unwrap();
        assert_eq!(tape.values(y), tape.values(x));

        let s = tape.sum_all(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[-1.0, -1.0, -1.0]);
    }

    #[test]
    fn grad_reverse_lambda_zero_blocks_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(row(&[1.0, 2.0]).requiring_grad());
        let y = tape.grad_reverse(x, 0.0).unwrap();
        let s = tape.sum_all(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_square_at_three() {
        // f(x) = x², f'(3) = 6
        let mut tape = Tape::new();
        let x = tape.leaf(row(&[3.0]).requiring_grad());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum_all(sq).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_constant_loss_leaves_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(row(&[1.0, 2.0]).requiring_grad());
        let c = tape.leaf(row(&[7.0]));
        let s = tape.sum_all(c).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(row(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Shape(_))));
    }

    #[test]
    fn two_branch_accumulation_equals_sum_of_branches() {
        // f(x) = sum(x) + sum(x∘x): grad = 1 + 2x, exactly.
        let mut tape = Tape::new();
        let x = tape.leaf(row(&[0.5, -1.25, 3.0]).requiring_grad());
        let s1 = tape.sum_all(x).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let s2 = tape.sum_all(sq).unwrap();
        let total = tape.add(s1, s2).unwrap();
        tape.backward(total).unwrap();
        let grad = tape.grad(x).unwrap();
        for (g, &v) in grad.iter().zip(tape.values(x)) {
            assert_eq!(*g, 2.0 * v + 1.0);
        }
    }

    #[test]
    fn replay_is_bitwise_deterministic() {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.leaf(row(&[0.3, -0.7, 1.9]).requiring_grad());
            let w = tape.leaf(Tensor::new(3, 2, vec![0.1, -0.2, 0.4, 0.8, -1.5, 0.6]).unwrap().requiring_grad());
            let h = tape.matmul(x, w).unwrap();
            let r = tape.relu(h).unwrap();
            let sm = tape.softmax(r).unwrap();
            let s = tape.sum_all(sm).unwrap();
            tape.backward(s).unwrap();
            (
                tape.values(sm).to_vec(),
                tape.grad(x).unwrap().to_vec(),
                tape.grad(w).unwrap().to_vec(),
            )
        };
        let (v1, gx1, gw1) = run();
        let (v2, gx2, gw2) = run();
        assert_eq!(v1, v2);
        assert_eq!(gx1, gx2);
        assert_eq!(gw1, gw2);
    }
}
