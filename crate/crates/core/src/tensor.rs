//! Dense `f64` tensors and a tape-based reverse-mode autodiff graph.
//!
//! A [`Graph`] is rebuilt for every forward pass. Each op appends one node to
//! the tape, so the tape is already in topological order and
//! [`Graph::backward`] is a single reverse sweep that visits every node once.
//! Gradients accumulate, so a value consumed twice receives the sum of both
//! branch gradients.

use crate::error::{shape_err, Error, Result};

/// Target value that cross-entropy skips.
pub const IGNORE_INDEX: usize = usize::MAX;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_COEFF: f64 = 0.044_715;

/// Row-major dense array. A scalar has an empty shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(shape_err("tensor", format!("zero dimension in {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err("from_rows", "ragged rows"));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Some((r, c)),
            _ => None,
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.shape[1] + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[row * cols..(row + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    Sum(Var),
    Transpose(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    MaskedSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Single-threaded; build one per forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`Graph::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op_name));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let t = self.value(v);
        t.dims2()
            .ok_or_else(|| shape_err(op, format!("expected a matrix, got shape {:?}", t.shape())))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m}x{k}] . [{k2}x{n}]")));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(
                "add",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    /// Adds a length-`n` vector to every row of an `m x n` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2("add_row", x)?;
        let tb = self.value(bias);
        if tb.numel() != n {
            return Err(shape_err("add_row", format!("bias {:?} for {n} columns", tb.shape())));
        }
        let bd = tb.data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(bd) {
                *v += b;
            }
        }
        let value = Tensor::new(vec![m, n], data)?;
        self.push("add_row", value, Op::AddRow(x, bias), &[x, bias])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(
                "mul",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push("scale", value, Op::Scale(x, factor), &[x])
    }

    /// Multiplies by a fixed, non-differentiable mask (dropout).
    pub fn mul_const(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let t = self.value(x);
        if mask.len() != t.numel() {
            return Err(shape_err("mul_const", "mask length differs from input"));
        }
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push("mul_const", value, Op::MulConst(x, mask), &[x])
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(total), Op::Sum(x), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2("transpose", x)?;
        let src = self.value(x).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let value = Tensor::new(vec![n, m], data)?;
        self.push("transpose", value, Op::Transpose(x), &[x])
    }

    /// Columns `start..start + width` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (m, n) = self.dims2("slice_cols", x)?;
        if width == 0 || start + width > n {
            return Err(shape_err(
                "slice_cols",
                format!("columns {start}..{} of {n}", start + width),
            ));
        }
        let src = self.value(x);
        let data = (0..m)
            .flat_map(|i| src.row(i)[start..start + width].iter().copied())
            .collect();
        let value = Tensor::new(vec![m, width], data)?;
        self.push("slice_cols", value, Op::SliceCols { x, start }, &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| shape_err("concat_cols", "no inputs"))?;
        let (m, _) = self.dims2("concat_cols", first)?;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.dims2("concat_cols", p)?;
            if r != m {
                return Err(shape_err("concat_cols", format!("row counts {m} vs {r}")));
            }
            total += c;
        }
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::new(vec![m, total], data)?;
        self.push("concat_cols", value, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Selects rows of a matrix by index (embedding lookup, CLS selection).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = self.dims2("gather_rows", table)?;
        if ids.is_empty() {
            return Err(shape_err("gather_rows", "empty index list"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(shape_err("gather_rows", format!("row {bad} out of {rows}")));
        }
        let src = self.value(table);
        let data = ids.iter().flat_map(|&i| src.row(i).iter().copied()).collect();
        let value = Tensor::new(vec![ids.len(), cols], data)?;
        self.push(
            "gather_rows",
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    /// Softmax along `axis` with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(shape_err(
                "softmax",
                format!("axis {axis} for rank {}", t.rank()),
            ));
        }
        let (outer, len, inner) = split_axis(t.shape(), axis);
        let mut data = t.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| o * len * inner + k * inner + i;
                let max = (0..len).map(|k| data[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = (data[idx(k)] - max).exp();
                    data[idx(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    data[idx(k)] /= total;
                }
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push("softmax", value, Op::Softmax { x, axis }, &[x])
    }

    /// Row softmax over a matrix where columns with `keep[j] == false` get
    /// probability exactly zero and do not enter the normalizer.
    pub fn masked_softmax(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let (m, n) = self.dims2("masked_softmax", x)?;
        if keep.len() != n {
            return Err(shape_err(
                "masked_softmax",
                format!("{} mask entries for {n} columns", keep.len()),
            ));
        }
        let src = self.value(x).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let out = &mut data[i * n..(i + 1) * n];
            let max = row
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut total = 0.0;
            for j in 0..n {
                if keep[j] {
                    out[j] = (row[j] - max).exp();
                    total += out[j];
                }
            }
            for v in out.iter_mut() {
                *v /= total;
            }
        }
        let value = Tensor::new(vec![m, n], data)?;
        self.push("masked_softmax", value, Op::MaskedSoftmax(x), &[x])
    }

    /// Normalizes each row of a matrix to zero mean and unit variance, then
    /// applies `gain` and `bias` (both of length `cols`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.dims2("layer_norm", x)?;
        if self.value(gain).numel() != n || self.value(bias).numel() != n {
            return Err(shape_err("layer_norm", format!("affine params must have {n} values")));
        }
        if eps <= 0.0 {
            return Err(Error::Contract("layer_norm eps must be positive".into()));
        }
        let (src, g, b) = (
            self.value(x).data(),
            self.value(gain).data(),
            self.value(bias).data(),
        );
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        self.push(
            "layer_norm",
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| gelu(v)).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        self.push("gelu", value, Op::Gelu(x), &[x])
    }

    /// Mean cross-entropy of `logits` (`n x C`) against class ids, skipping
    /// rows whose target is [`IGNORE_INDEX`]. All rows ignored gives 0.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, c) = self.dims2("cross_entropy", logits)?;
        if targets.len() != n {
            return Err(shape_err(
                "cross_entropy",
                format!("{} targets for {n} rows", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t != IGNORE_INDEX && t >= c) {
            return Err(shape_err("cross_entropy", format!("target {bad} with {c} classes")));
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        let mut count = 0;
        for (i, &t) in targets.iter().enumerate() {
            if t == IGNORE_INDEX {
                continue;
            }
            let row = &src[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + denom.ln();
            for j in 0..c {
                probs[i * c + j] = (row[j] - log_z).exp();
            }
            total += log_z - row[t];
            count += 1;
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            &[logits],
        )
    }

    /// Reverse sweep from a scalar `loss`. Clears gradients from any earlier
    /// call first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(dy) = self.grads[idx].take() else {
                continue;
            };
            backprop_node(&self.nodes, &mut self.grads, idx, &dy);
            self.grads[idx] = Some(dy);
        }
        Ok(())
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_COEFF * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (SQRT_2_OVER_PI * (x + GELU_COEFF * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEFF * x * x)
}

/// Gradient buffer for `v`, allocated on first use; `None` if `v` is not
/// differentiable.
fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.numel()]))
}

fn backprop_node(nodes: &[Node], grads: &mut [Option<Vec<f64>>], idx: usize, dy: &[f64]) {
    let node = &nodes[idx];
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = val(*a).dims2().expect("matmul lhs");
            let n = val(*b).shape()[1];
            if let Some(da) = slot(nodes, grads, *a) {
                let bd = val(*b).data();
                for i in 0..m {
                    for p in 0..k {
                        let brow = &bd[p * n..(p + 1) * n];
                        let dyrow = &dy[i * n..(i + 1) * n];
                        da[i * k + p] += dyrow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            if let Some(db) = slot(nodes, grads, *b) {
                let ad = val(*a).data();
                for i in 0..m {
                    let dyrow = &dy[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = ad[i * k + p];
                        for (d, g) in db[p * n..(p + 1) * n].iter_mut().zip(dyrow) {
                            *d += av * g;
                        }
                    }
                }
            }
        }
        Op::Add(a, b) => {
            for v in [*a, *b] {
                if let Some(d) = slot(nodes, grads, v) {
                    d.iter_mut().zip(dy).for_each(|(d, g)| *d += g);
                }
            }
        }
        Op::AddRow(x, bias) => {
            if let Some(dx) = slot(nodes, grads, *x) {
                dx.iter_mut().zip(dy).for_each(|(d, g)| *d += g);
            }
            if let Some(db) = slot(nodes, grads, *bias) {
                let n = db.len();
                for row in dy.chunks(n) {
                    db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                }
            }
        }
        Op::Mul(a, b) => {
            let (ad, bd) = (val(*a).data(), val(*b).data());
            if let Some(da) = slot(nodes, grads, *a) {
                for ((d, g), y) in da.iter_mut().zip(dy).zip(bd) {
                    *d += g * y;
                }
            }
            if let Some(db) = slot(nodes, grads, *b) {
                for ((d, g), x) in db.iter_mut().zip(dy).zip(ad) {
                    *d += g * x;
                }
            }
        }
        Op::Scale(x, factor) => {
            if let Some(dx) = slot(nodes, grads, *x) {
                dx.iter_mut().zip(dy).for_each(|(d, g)| *d += g * factor);
            }
        }
        Op::MulConst(x, mask) => {
            if let Some(dx) = slot(nodes, grads, *x) {
                for ((d, g), m) in dx.iter_mut().zip(dy).zip(mask) {
                    *d += g * m;
                }
            }
        }
        Op::Sum(x) => {
            if let Some(dx) = slot(nodes, grads, *x) {
                dx.iter_mut().for_each(|d| *d += dy[0]);
            }
        }
        Op::Transpose(x) => {
            let (m, n) = val(*x).dims2().expect("transpose input");
            if let Some(dx) = slot(nodes, grads, *x) {
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] += dy[j * m + i];
                    }
                }
            }
        }
        Op::SliceCols { x, start } => {
            let n = val(*x).shape()[1];
            let width = node.value.shape()[1];
            if let Some(dx) = slot(nodes, grads, *x) {
                for (i, row) in dy.chunks(width).enumerate() {
                    for (j, g) in row.iter().enumerate() {
                        dx[i * n + start + j] += g;
                    }
                }
            }
        }
        Op::ConcatCols(parts) => {
            let total = node.value.shape()[1];
            let mut offset = 0;
            for &p in parts {
                let width = val(p).shape()[1];
                if let Some(dp) = slot(nodes, grads, p) {
                    for (i, row) in dp.chunks_mut(width).enumerate() {
                        for (j, d) in row.iter_mut().enumerate() {
                            *d += dy[i * total + offset + j];
                        }
                    }
                }
                offset += width;
            }
        }
        Op::Gather { table, ids } => {
            let cols = val(*table).shape()[1];
            if let Some(dt) = slot(nodes, grads, *table) {
                for (r, &id) in ids.iter().enumerate() {
                    let src = &dy[r * cols..(r + 1) * cols];
                    for (d, g) in dt[id * cols..(id + 1) * cols].iter_mut().zip(src) {
                        *d += g;
                    }
                }
            }
        }
        Op::Softmax { x, axis } => {
            let y = node.value.data();
            let (outer, len, inner) = split_axis(node.value.shape(), *axis);
            if let Some(dx) = slot(nodes, grads, *x) {
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| o * len * inner + k * inner + i;
                        let dot: f64 = (0..len).map(|k| y[idx(k)] * dy[idx(k)]).sum();
                        for k in 0..len {
                            dx[idx(k)] += y[idx(k)] * (dy[idx(k)] - dot);
                        }
                    }
                }
            }
        }
        Op::MaskedSoftmax(x) => {
            let y = node.value.data();
            let n = node.value.shape()[1];
            if let Some(dx) = slot(nodes, grads, *x) {
                for ((yr, gr), dr) in y.chunks(n).zip(dy.chunks(n)).zip(dx.chunks_mut(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dr[j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let n = node.value.shape()[1];
            let g = val(*gain).data();
            if let Some(dg) = slot(nodes, grads, *gain) {
                for (hr, gr) in xhat.chunks(n).zip(dy.chunks(n)) {
                    for j in 0..n {
                        dg[j] += gr[j] * hr[j];
                    }
                }
            }
            if let Some(db) = slot(nodes, grads, *bias) {
                for gr in dy.chunks(n) {
                    db.iter_mut().zip(gr).for_each(|(d, v)| *d += v);
                }
            }
            if let Some(dx) = slot(nodes, grads, *x) {
                let nf = n as f64;
                for (i, (hr, gr)) in xhat.chunks(n).zip(dy.chunks(n)).enumerate() {
                    let dh: Vec<f64> = gr.iter().zip(g).map(|(a, b)| a * b).collect();
                    let sum_dh: f64 = dh.iter().sum();
                    let sum_dh_h: f64 = dh.iter().zip(hr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dx[i * n + j] += inv_std[i] / nf * (nf * dh[j] - sum_dh - hr[j] * sum_dh_h);
                    }
                }
            }
        }
        Op::Gelu(x) => {
            let xd = val(*x).data();
            if let Some(dx) = slot(nodes, grads, *x) {
                for ((d, g), &v) in dx.iter_mut().zip(dy).zip(xd) {
                    *d += g * gelu_grad(v);
                }
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
            count,
        } => {
            let c = val(*logits).shape()[1];
            if let Some(dl) = slot(nodes, grads, *logits) {
                if *count == 0 {
                    return;
                }
                let scale = dy[0] / *count as f64;
                for (i, &t) in targets.iter().enumerate() {
                    if t == IGNORE_INDEX {
                        continue;
                    }
                    for j in 0..c {
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        dl[i * c + j] += scale * (probs[i * c + j] - onehot);
                    }
                }
            }
        }
    }
}
