use crate::error::{Error, Result};
use crate::geometry::CORNER3D_SIGNS;

use super::tensor::{matmul_nn, matmul_nt, matmul_tn_acc, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Softmax { x: Var, axis: Axis, mask: Option<Vec<bool>> },
    Concat { parts: Vec<Var>, axis: Axis },
    SliceCols { x: Var, start: usize },
    GatherRows { x: Var, idx: Vec<usize> },
    MaxPool { x: Var, argmax: Vec<usize> },
    Reshape(Var),
    Expand(Var),
    Sum(Var),
    Mean(Var),
    Log { x: Var, eps: f64 },
    CrossEntropy { logits: Var, target: Tensor, probs: Vec<f64> },
    Mse(Var, Var),
    RowNorm(Var),
    Corners3d(Var),
    SelectRows { a: Var, b: Var, take_a: Vec<bool> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of operations. Nodes are appended in evaluation order, so
/// the node list is already a topological order for the backward sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

const LN_EPS: f64 = 1e-5;

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(format!("{what} produced a non-finite value")))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` root with respect to `v`, if any.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::from_parts(self.value(v).shape().to_vec(), g.clone()))
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var], what: &str) -> Result<Var> {
        check_finite(value.data(), what)?;
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims(a);
        let (k2, m) = self.dims(b);
        if k != k2 {
            return Err(Error::shape(format!("matmul {n}x{k} by {k2}x{m}")));
        }
        let out = matmul_nn(self.value(a).data(), self.value(b).data(), n, k, m);
        self.push(Tensor::from_parts(vec![n, m], out), Op::MatMul(a, b), &[a, b], "matmul")
    }

    /// `a * b^T`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims(a);
        let (m, k2) = self.dims(b);
        if k != k2 {
            return Err(Error::shape(format!("matmul_t {n}x{k} by ({m}x{k2})^T")));
        }
        let out = matmul_nt(self.value(a).data(), self.value(b).data(), n, k, m);
        self.push(Tensor::from_parts(vec![n, m], out), Op::MatMulT(a, b), &[a, b], "matmul_t")
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), op, &[a, b], what)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    fn row_broadcast(&mut self, x: Var, r: Var, op: Op, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (n, m) = self.dims(x);
        if self.shape(r) != [1, m] {
            return Err(Error::shape(format!("{what}: row {:?} vs {n}x{m}", self.shape(r))));
        }
        let row = self.value(r).data();
        let mut data = self.value(x).data().to_vec();
        for chunk in data.chunks_mut(m) {
            for (v, b) in chunk.iter_mut().zip(row) {
                *v = f(*v, *b);
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_parts(shape, data), op, &[x, r], what)
    }

    /// Adds a `1 x m` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_broadcast(x, row, Op::AddRow(x, row), "add_row", |a, b| a + b)
    }

    /// Multiplies every row of `x` elementwise by a `1 x m` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_broadcast(x, row, Op::MulRow(x, row), "mul_row", |a, b| a * b)
    }

    pub fn mul_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * s).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Scale(x, s), &[x], "mul_scalar")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.max(0.0)).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Relu(x), &[x], "relu")
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let (n, m) = self.dims(x);
        let src = self.value(x).data();
        let mut data = vec![0.0; n * m];
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = &src[i * m..(i + 1) * m];
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            for (o, v) in data[i * m..(i + 1) * m].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_parts(shape, data), Op::LayerNorm { x, inv_std }, &[x], "layer_norm")
    }

    /// Softmax along `axis` of a matrix. Masked entries (`false`) are excluded
    /// and receive probability exactly zero. A fully masked row (or column)
    /// comes out as all zeros.
    pub fn softmax(&mut self, x: Var, axis: Axis, mask: Option<&[bool]>) -> Result<Var> {
        let (n, m) = self.dims(x);
        if let Some(mk) = mask {
            if mk.len() != n * m {
                return Err(Error::shape(format!("softmax mask has {} entries for {n}x{m}", mk.len())));
            }
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; n * m];
        let (outer, inner) = match axis {
            Axis::Cols => (n, m),
            Axis::Rows => (m, n),
        };
        let idx = |o: usize, i: usize| match axis {
            Axis::Cols => o * m + i,
            Axis::Rows => i * m + o,
        };
        let keep = |k: usize| mask.is_none_or(|mk| mk[k]);
        for o in 0..outer {
            let mut mx = f64::NEG_INFINITY;
            for i in 0..inner {
                let k = idx(o, i);
                if keep(k) {
                    mx = mx.max(src[k]);
                }
            }
            if mx == f64::NEG_INFINITY {
                // fully masked slice stays all-zero
                continue;
            }
            let mut sum = 0.0;
            for i in 0..inner {
                let k = idx(o, i);
                if keep(k) {
                    let e = (src[k] - mx).exp();
                    out[k] = e;
                    sum += e;
                }
            }
            for i in 0..inner {
                let k = idx(o, i);
                if keep(k) {
                    out[k] /= sum;
                }
            }
        }
        let shape = self.shape(x).to_vec();
        let op = Op::Softmax {
            x,
            axis,
            mask: mask.map(|m| m.to_vec()),
        };
        self.push(Tensor::from_parts(shape, out), op, &[x], "softmax")
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat of nothing"))?;
        let (n0, m0) = self.dims(first);
        let out = match axis {
            Axis::Rows => {
                let mut rows = 0;
                let mut data = Vec::new();
                for p in parts {
                    let (n, m) = self.dims(*p);
                    if m != m0 {
                        return Err(Error::shape(format!("concat rows: {m} vs {m0} columns")));
                    }
                    rows += n;
                    data.extend_from_slice(self.value(*p).data());
                }
                Tensor::from_parts(vec![rows, m0], data)
            }
            Axis::Cols => {
                let mut cols = 0;
                for p in parts {
                    let (n, m) = self.dims(*p);
                    if n != n0 {
                        return Err(Error::shape(format!("concat cols: {n} vs {n0} rows")));
                    }
                    cols += m;
                }
                let mut data = Vec::with_capacity(n0 * cols);
                for i in 0..n0 {
                    for p in parts {
                        data.extend_from_slice(self.value(*p).row(i));
                    }
                }
                Tensor::from_parts(vec![n0, cols], data)
            }
        };
        let op = Op::Concat {
            parts: parts.to_vec(),
            axis,
        };
        self.push(out, op, parts, "concat")
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, m) = self.dims(x);
        if start >= end || end > m {
            return Err(Error::shape(format!("slice {start}..{end} of {m} columns")));
        }
        let w = end - start;
        let t = self.value(x);
        let mut data = Vec::with_capacity(n * w);
        for i in 0..n {
            data.extend_from_slice(&t.row(i)[start..end]);
        }
        self.push(Tensor::from_parts(vec![n, w], data), Op::SliceCols { x, start }, &[x], "slice_cols")
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (n, m) = self.dims(x);
        if idx.is_empty() || idx.iter().any(|&i| i >= n) {
            return Err(Error::shape(format!("gather rows {idx:?} from {n} rows")));
        }
        let t = self.value(x);
        let mut data = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        let op = Op::GatherRows { x, idx: idx.to_vec() };
        self.push(Tensor::from_parts(vec![idx.len(), m], data), op, &[x], "gather_rows")
    }

    /// Max over consecutive groups of `group` rows: `(g*group) x m -> g x m`.
    /// `group == rows` pools the whole matrix into one row.
    pub fn max_pool_rows(&mut self, x: Var, group: usize) -> Result<Var> {
        let (n, m) = self.dims(x);
        if group == 0 || n % group != 0 {
            return Err(Error::shape(format!("max pool groups of {group} over {n} rows")));
        }
        let g = n / group;
        let t = self.value(x);
        let mut data = vec![f64::NEG_INFINITY; g * m];
        let mut argmax = vec![0; g * m];
        for gi in 0..g {
            for r in gi * group..(gi + 1) * group {
                for (j, v) in t.row(r).iter().enumerate() {
                    if *v > data[gi * m + j] {
                        data[gi * m + j] = *v;
                        argmax[gi * m + j] = r;
                    }
                }
            }
        }
        self.push(Tensor::from_parts(vec![g, m], data), Op::MaxPool { x, argmax }, &[x], "max_pool")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        self.push(t, Op::Reshape(x), &[x], "reshape")
    }

    /// Broadcasts a `1 x 1` value to `shape`.
    pub fn expand(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if self.value(x).len() != 1 {
            return Err(Error::shape("expand needs a single-element tensor"));
        }
        let t = Tensor::filled(shape, self.value(x).item());
        self.push(t, Op::Expand(x), &[x], "expand")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x], "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x], "mean")
    }

    /// `ln(x + eps)` elementwise.
    pub fn log(&mut self, x: Var, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| (v + eps).ln()).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Log { x, eps }, &[x], "log")
    }

    /// Mean over rows of `-sum_c target * log softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, target: &Tensor) -> Result<Var> {
        let (n, m) = self.dims(logits);
        if target.shape() != self.shape(logits) {
            return Err(Error::shape(format!(
                "cross entropy target {:?} vs logits {:?}",
                target.shape(),
                self.shape(logits)
            )));
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; n * m];
        let mut loss = 0.0;
        for i in 0..n {
            let row = &src[i * m..(i + 1) * m];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            for j in 0..m {
                probs[i * m + j] = (row[j] - lse).exp();
                loss -= target.get(i, j) * (row[j] - lse);
            }
        }
        let op = Op::CrossEntropy {
            logits,
            target: target.clone(),
            probs,
        };
        self.push(Tensor::scalar(loss / n as f64), op, &[logits], "cross_entropy")
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let s: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let n = ta.len() as f64;
        self.push(Tensor::scalar(s / n), Op::Mse(a, b), &[a, b], "mse")
    }

    /// Euclidean norm of every row: `n x k -> n x 1`. The gradient at a zero
    /// row is taken as zero.
    pub fn row_norm(&mut self, x: Var) -> Result<Var> {
        let (n, _) = self.dims(x);
        let t = self.value(x);
        let data = (0..n).map(|i| t.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        self.push(Tensor::from_parts(vec![n, 1], data), Op::RowNorm(x), &[x], "row_norm")
    }

    /// Eight corners per box row `[x, y, z, l, w, h, yaw]`: `n x 7 -> 8n x 3`,
    /// in the corner order of [`crate::geometry::corners3d`].
    pub fn corners3d(&mut self, boxes: Var) -> Result<Var> {
        let (n, m) = self.dims(boxes);
        if m != 7 {
            return Err(Error::shape(format!("corners3d needs 7 columns, got {m}")));
        }
        let t = self.value(boxes);
        let mut data = Vec::with_capacity(n * 24);
        for i in 0..n {
            let r = t.row(i);
            let p = [r[0], r[1], r[2], r[3], r[4], r[5], r[6]];
            for c in crate::geometry::corners3d_unchecked(p) {
                data.extend_from_slice(&c);
            }
        }
        self.push(Tensor::from_parts(vec![8 * n, 3], data), Op::Corners3d(boxes), &[boxes], "corners3d")
    }

    /// Row `i` of the result is row `i` of `a` where `take_a[i]`, else of `b`.
    pub fn select_rows(&mut self, a: Var, b: Var, take_a: &[bool]) -> Result<Var> {
        self.same_shape(a, b, "select_rows")?;
        let (n, _) = self.dims(a);
        if take_a.len() != n {
            return Err(Error::shape("select_rows mask length"));
        }
        let (ta, tb) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(ta.len());
        for (i, &t) in take_a.iter().enumerate() {
            data.extend_from_slice(if t { ta.row(i) } else { tb.row(i) });
        }
        let shape = ta.shape().to_vec();
        let op = Op::SelectRows {
            a,
            b,
            take_a: take_a.to_vec(),
        };
        self.push(Tensor::from_parts(shape, data), op, &[a, b], "select_rows")
    }

    /// Reverse sweep from a scalar root. Gradients of every node that depends
    /// on a `requires_grad` leaf are retained and readable through [`Tape::grad`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar root, got {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.backprop_node(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.nodes[i].requires_grad {
                *g = None;
            }
        }
        if grads.iter().flatten().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::numeric("backward produced a non-finite gradient"));
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                if wants(*a) {
                    // dA = G * B^T
                    let da = matmul_nt(g, tb.data(), n, m, k);
                    acc(*a, &mut |s| s.iter_mut().zip(&da).for_each(|(x, y)| *x += y));
                }
                // dB = A^T * G
                acc(*b, &mut |s| matmul_tn_acc(s, ta.data(), g, n, k, m));
            }
            Op::MatMulT(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (n, k, m) = (ta.rows(), ta.cols(), tb.rows());
                if wants(*a) {
                    // dA = G * B
                    let da = matmul_nn(g, tb.data(), n, m, k);
                    acc(*a, &mut |s| s.iter_mut().zip(&da).for_each(|(x, y)| *x += y));
                }
                // dB = G^T * A
                acc(*b, &mut |s| matmul_tn_acc(s, g, ta.data(), n, m, k));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                acc(*a, &mut |s| {
                    for ((x, gv), bv) in s.iter_mut().zip(g).zip(tb) {
                        *x += gv * bv;
                    }
                });
                acc(*b, &mut |s| {
                    for ((x, gv), av) in s.iter_mut().zip(g).zip(ta) {
                        *x += gv * av;
                    }
                });
            }
            Op::AddRow(x, r) => {
                let m = nodes[r.0].value.len();
                acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(a, b)| *a += b));
                acc(*r, &mut |s| {
                    for chunk in g.chunks(m) {
                        s.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::MulRow(x, r) => {
                let row = nodes[r.0].value.data();
                let xv = nodes[x.0].value.data();
                let m = row.len();
                acc(*x, &mut |s| {
                    for (sc, gc) in s.chunks_mut(m).zip(g.chunks(m)) {
                        for ((a, gv), rv) in sc.iter_mut().zip(gc).zip(row) {
                            *a += gv * rv;
                        }
                    }
                });
                acc(*r, &mut |s| {
                    for (gc, xc) in g.chunks(m).zip(xv.chunks(m)) {
                        for ((a, gv), xv) in s.iter_mut().zip(gc).zip(xc) {
                            *a += gv * xv;
                        }
                    }
                });
            }
            Op::Scale(x, c) => {
                acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(a, b)| *a += c * b));
            }
            Op::Relu(x) => {
                let xv = nodes[x.0].value.data();
                acc(*x, &mut |s| {
                    for ((a, gv), v) in s.iter_mut().zip(g).zip(xv) {
                        if *v > 0.0 {
                            *a += gv;
                        }
                    }
                });
            }
            Op::LayerNorm { x, inv_std } => {
                let y = node.value.data();
                let m = node.value.cols();
                acc(*x, &mut |s| {
                    for (r, is) in inv_std.iter().enumerate() {
                        let gy = &g[r * m..(r + 1) * m];
                        let yr = &y[r * m..(r + 1) * m];
                        let mg = gy.iter().sum::<f64>() / m as f64;
                        let mgy = gy.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / m as f64;
                        for j in 0..m {
                            s[r * m + j] += is * (gy[j] - mg - yr[j] * mgy);
                        }
                    }
                });
            }
            Op::Softmax { x, axis, mask } => {
                let y = node.value.data();
                let (n, m) = (node.value.rows(), node.value.cols());
                let keep = |k: usize| mask.as_ref().is_none_or(|mk| mk[k]);
                let (outer, inner) = match axis {
                    Axis::Cols => (n, m),
                    Axis::Rows => (m, n),
                };
                let idx = |o: usize, i: usize| match axis {
                    Axis::Cols => o * m + i,
                    Axis::Rows => i * m + o,
                };
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        let mut dot = 0.0;
                        for i in 0..inner {
                            let k = idx(o, i);
                            if keep(k) {
                                dot += g[k] * y[k];
                            }
                        }
                        for i in 0..inner {
                            let k = idx(o, i);
                            if keep(k) {
                                s[k] += y[k] * (g[k] - dot);
                            }
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => match axis {
                Axis::Rows => {
                    let mut off = 0;
                    for p in parts {
                        let len = nodes[p.0].value.len();
                        let seg = &g[off..off + len];
                        acc(*p, &mut |s| s.iter_mut().zip(seg).for_each(|(a, b)| *a += b));
                        off += len;
                    }
                }
                Axis::Cols => {
                    let total = node.value.cols();
                    let n = node.value.rows();
                    let mut off = 0;
                    for p in parts {
                        let w = nodes[p.0].value.cols();
                        acc(*p, &mut |s| {
                            for r in 0..n {
                                let src = &g[r * total + off..r * total + off + w];
                                s[r * w..(r + 1) * w].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                            }
                        });
                        off += w;
                    }
                }
            },
            Op::SliceCols { x, start } => {
                let m = nodes[x.0].value.cols();
                let w = node.value.cols();
                acc(*x, &mut |s| {
                    for (r, gr) in g.chunks(w).enumerate() {
                        s[r * m + start..r * m + start + w]
                            .iter_mut()
                            .zip(gr)
                            .for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::GatherRows { x, idx } => {
                let m = node.value.cols();
                acc(*x, &mut |s| {
                    for (k, &r) in idx.iter().enumerate() {
                        s[r * m..(r + 1) * m]
                            .iter_mut()
                            .zip(&g[k * m..(k + 1) * m])
                            .for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::MaxPool { x, argmax } => {
                let m = node.value.cols();
                acc(*x, &mut |s| {
                    for (k, &r) in argmax.iter().enumerate() {
                        s[r * m + k % m] += g[k];
                    }
                });
            }
            Op::Reshape(x) => {
                acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(a, b)| *a += b));
            }
            Op::Expand(x) => {
                let total: f64 = g.iter().sum();
                acc(*x, &mut |s| s[0] += total);
            }
            Op::Sum(x) => {
                acc(*x, &mut |s| s.iter_mut().for_each(|a| *a += g[0]));
            }
            Op::Mean(x) => {
                let n = nodes[x.0].value.len() as f64;
                acc(*x, &mut |s| s.iter_mut().for_each(|a| *a += g[0] / n));
            }
            Op::Log { x, eps } => {
                let xv = nodes[x.0].value.data();
                acc(*x, &mut |s| {
                    for ((a, gv), v) in s.iter_mut().zip(g).zip(xv) {
                        *a += gv / (v + eps);
                    }
                });
            }
            Op::CrossEntropy { logits, target, probs } => {
                let t = &nodes[logits.0].value;
                let (n, m) = (t.rows(), t.cols());
                let scale = g[0] / n as f64;
                acc(*logits, &mut |s| {
                    for i in 0..n {
                        let tsum: f64 = target.row(i).iter().sum();
                        for j in 0..m {
                            s[i * m + j] += scale * (probs[i * m + j] * tsum - target.get(i, j));
                        }
                    }
                });
            }
            Op::Mse(a, b) => {
                let (ta, tb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                let c = 2.0 * g[0] / ta.len() as f64;
                acc(*a, &mut |s| {
                    for ((v, x), y) in s.iter_mut().zip(ta).zip(tb) {
                        *v += c * (x - y);
                    }
                });
                acc(*b, &mut |s| {
                    for ((v, x), y) in s.iter_mut().zip(ta).zip(tb) {
                        *v -= c * (x - y);
                    }
                });
            }
            Op::RowNorm(x) => {
                let t = &nodes[x.0].value;
                let k = t.cols();
                let norms = node.value.data();
                acc(*x, &mut |s| {
                    for (r, nr) in norms.iter().enumerate() {
                        if *nr == 0.0 {
                            continue;
                        }
                        for j in 0..k {
                            s[r * k + j] += g[r] * t.get(r, j) / nr;
                        }
                    }
                });
            }
            Op::Corners3d(b) => {
                let t = &nodes[b.0].value;
                acc(*b, &mut |s| {
                    for r in 0..t.rows() {
                        let p = t.row(r);
                        let (sn, cs) = p[6].sin_cos();
                        let gs = &mut s[r * 7..(r + 1) * 7];
                        for (ci, sign) in CORNER3D_SIGNS.iter().enumerate() {
                            let base = (r * 8 + ci) * 3;
                            let (gx, gy, gz) = (g[base], g[base + 1], g[base + 2]);
                            let ox = sign[0] * p[3] / 2.0;
                            let oy = sign[1] * p[4] / 2.0;
                            gs[0] += gx;
                            gs[1] += gy;
                            gs[2] += gz;
                            gs[3] += (gx * cs + gy * sn) * sign[0] / 2.0;
                            gs[4] += (-gx * sn + gy * cs) * sign[1] / 2.0;
                            gs[5] += gz * sign[2] / 2.0;
                            gs[6] += gx * (-sn * ox - cs * oy) + gy * (cs * ox - sn * oy);
                        }
                    }
                });
            }
            Op::SelectRows { a, b, take_a } => {
                let m = node.value.cols();
                acc(*a, &mut |s| {
                    for (r, &t) in take_a.iter().enumerate() {
                        if t {
                            s[r * m..(r + 1) * m]
                                .iter_mut()
                                .zip(&g[r * m..(r + 1) * m])
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                });
                acc(*b, &mut |s| {
                    for (r, &t) in take_a.iter().enumerate() {
                        if !t {
                            s[r * m..(r + 1) * m]
                                .iter_mut()
                                .zip(&g[r * m..(r + 1) * m])
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                });
            }
        }
    }
}
