//! Dense `f64` tensors and a tape that records operations for reverse-mode
//! differentiation.
//!
//! The op set is deliberately narrow: it covers the forecaster's forward pass
//! (causal convolutions, small MLPs, masked attention and the pinball loss)
//! and nothing else. Every op is written against row-major flat storage.
//!
//! ```
//! use spade::tensor::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let p = g.param(Tensor::new([2], vec![1.0, 2.0]).unwrap());
//! let sq = g.mul(p, p).unwrap();
//! let half = g.scale(sq, 0.5);
//! let loss = g.sum(half);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.wrt(p), vec![1.0, 2.0]);
//! ```

use crate::error::{Error, Result};

/// Additive penalty applied to masked logits before exponentiation.
pub const MASK_PENALTY: f64 = -1e9;

/// A dense n-dimensional array of `f64` in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|v| *v = value);
        t
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Row-major matrix from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flatten().copied().collect();
        Tensor {
            shape: vec![rows.len(), cols],
            data,
        }
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

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// `(rows, cols)` of a matrix. One-dimensional tensors read as a single row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => {
                let c = *self.shape.last().unwrap();
                (self.data.len() / c, c)
            }
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        let (_, c) = self.dims2();
        self.data[row * c + col]
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, &shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleRows(Var, Vec<f64>),
    AddRowBias(Var, Var),
    AddChannelBias(Var, Var),
    Relu(Var),
    Conv1d {
        x: Var,
        kernel: Var,
        dilation: usize,
    },
    SoftmaxMasked(Var),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    RepeatRows(Var),
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    Sum(Var),
    Pinball {
        pred: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
        quantiles: Vec<f64>,
    },
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::ScaleRows(..) => "scale_rows",
            Op::AddRowBias(..) => "add_row_bias",
            Op::AddChannelBias(..) => "add_channel_bias",
            Op::Relu(_) => "relu",
            Op::Conv1d { .. } => "conv1d_causal",
            Op::SoftmaxMasked(_) => "softmax_masked",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::RepeatRows(_) => "repeat_rows",
            Op::GatherRows { .. } => "gather_rows",
            Op::Sum(_) => "sum",
            Op::Pinball { .. } => "pinball",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of a computation. Node ids are insertion indices, so
/// every input of a node is an earlier node and reverse insertion order is a
/// valid reverse topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `var`, or zeros of the right length when nothing reached it.
    pub fn wrt(&self, var: Var) -> Vec<f64> {
        self.get(var).map(<[f64]>::to_vec).unwrap_or_default()
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.kind()
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = self.value(v);
        match t.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(op, s, &[0, 0])),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul")?;
        let (k2, n) = self.matrix(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(
            Op::MatMul(a, b),
            Tensor {
                shape: vec![m, n],
                data: out,
            },
            rg,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix(a, "transpose")?;
        let av = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            Op::Transpose(a),
            Tensor {
                shape: vec![n, m],
                data: out,
            },
            rg,
        ))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let shape = av.shape().to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Op::Add(a, b), Tensor { shape, data }, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let shape = av.shape().to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Op::Mul(a, b), Tensor { shape, data }, rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * factor).collect();
        let shape = t.shape().to_vec();
        let rg = self.any_grad(&[a]);
        self.push(Op::Scale(a, factor), Tensor { shape, data }, rg)
    }

    /// Multiplies row `r` of a matrix by the constant `factors[r]`.
    pub fn scale_rows(&mut self, a: Var, factors: &[f64]) -> Result<Var> {
        let (m, n) = self.matrix(a, "scale_rows")?;
        if factors.len() != m {
            return Err(Error::shape("scale_rows", &[m, n], &[factors.len()]));
        }
        let av = self.value(a).data();
        let mut data = av.to_vec();
        for (r, f) in factors.iter().enumerate() {
            data[r * n..(r + 1) * n].iter_mut().for_each(|v| *v *= f);
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            Op::ScaleRows(a, factors.to_vec()),
            Tensor {
                shape: vec![m, n],
                data,
            },
            rg,
        ))
    }

    /// `x[m×n] + b[n]`, the bias broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = self.matrix(x, "add_row_bias")?;
        if self.value(b).numel() != n {
            return Err(Error::shape("add_row_bias", &[m, n], self.value(b).shape()));
        }
        let bv = self.value(b).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            row.iter_mut().zip(bv).for_each(|(v, b)| *v += b);
        }
        let rg = self.any_grad(&[x, b]);
        Ok(self.push(
            Op::AddRowBias(x, b),
            Tensor {
                shape: vec![m, n],
                data,
            },
            rg,
        ))
    }

    /// `x[c×t] + b[c]`, one bias per channel broadcast over time.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (c, t) = self.matrix(x, "add_channel_bias")?;
        if self.value(b).numel() != c {
            return Err(Error::shape("add_channel_bias", &[c, t], self.value(b).shape()));
        }
        let bv = self.value(b).data();
        let mut data = self.value(x).data().to_vec();
        for (row, b) in data.chunks_mut(t).zip(bv) {
            row.iter_mut().for_each(|v| *v += b);
        }
        let rg = self.any_grad(&[x, b]);
        Ok(self.push(
            Op::AddChannelBias(x, b),
            Tensor {
                shape: vec![c, t],
                data,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&v| v.max(0.0)).collect();
        let shape = t.shape().to_vec();
        let rg = self.any_grad(&[a]);
        self.push(Op::Relu(a), Tensor { shape, data }, rg)
    }

    /// Dilated causal convolution of `x[in×T]` with `kernel[out×in×k]`.
    ///
    /// Tap `j` of the kernel reads time `t - (k-1-j)·dilation`; indices before
    /// the start of the series read as zero, so the output keeps length `T`.
    pub fn conv1d_causal(&mut self, x: Var, kernel: Var, dilation: usize) -> Result<Var> {
        if dilation == 0 {
            return Err(Error::InvalidArgument("dilation must be ≥ 1".into()));
        }
        let (cin, len) = self.matrix(x, "conv1d_causal")?;
        let ks = self.value(kernel).shape().to_vec();
        let [cout, kin, k] = ks[..] else {
            return Err(Error::shape("conv1d_causal", &[cin, len], &ks));
        };
        if kin != cin {
            return Err(Error::shape("conv1d_causal", &[cin, len], &ks));
        }
        let xv = self.value(x).data();
        let wv = self.value(kernel).data();
        let mut out = vec![0.0; cout * len];
        for o in 0..cout {
            let yrow = &mut out[o * len..(o + 1) * len];
            for i in 0..cin {
                let xrow = &xv[i * len..(i + 1) * len];
                for j in 0..k {
                    let w = wv[(o * cin + i) * k + j];
                    let off = (k - 1 - j) * dilation;
                    if off >= len || w == 0.0 {
                        continue;
                    }
                    for (y, xs) in yrow[off..].iter_mut().zip(&xrow[..len - off]) {
                        *y += w * xs;
                    }
                }
            }
        }
        let rg = self.any_grad(&[x, kernel]);
        Ok(self.push(
            Op::Conv1d { x, kernel, dilation },
            Tensor {
                shape: vec![cout, len],
                data: out,
            },
            rg,
        ))
    }

    /// Softmax over the last axis after adding [`MASK_PENALTY`] to logits whose
    /// mask entry is 0. Rows whose mask is entirely zero produce all-zero rows.
    pub fn softmax_masked(&mut self, logits: Var, mask: &Tensor) -> Result<Var> {
        let lt = self.value(logits);
        if lt.shape() != mask.shape() {
            return Err(Error::shape("softmax_masked", lt.shape(), mask.shape()));
        }
        if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::InvalidArgument("softmax mask entries must be 0 or 1".into()));
        }
        let n = *lt.shape().last().unwrap_or(&1);
        let mut data = vec![0.0; lt.numel()];
        for ((out, row), mrow) in data.chunks_mut(n).zip(lt.data().chunks(n)).zip(mask.data().chunks(n)) {
            if mrow.iter().all(|&m| m == 0.0) {
                continue;
            }
            let shifted: Vec<f64> = row
                .iter()
                .zip(mrow)
                .map(|(&l, &m)| l + (1.0 - m) * MASK_PENALTY)
                .collect();
            let max = shifted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (o, s) in out.iter_mut().zip(&shifted) {
                *o = (s - max).exp();
                total += *o;
            }
            out.iter_mut().for_each(|o| *o /= total);
        }
        let shape = lt.shape().to_vec();
        let rg = self.any_grad(&[logits]);
        Ok(self.push(Op::SoftmaxMasked(logits), Tensor { shape, data }, rg))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_cols of nothing".into()))?;
        let (m, _) = self.matrix(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix(p, "concat_cols")?;
            if r != m {
                return Err(Error::shape("concat_cols", self.value(first).shape(), &[r, c]));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut data = vec![0.0; m * n];
        let mut col = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.value(p).data();
            for r in 0..m {
                data[r * n + col..r * n + col + w].copy_from_slice(&pv[r * w..(r + 1) * w]);
            }
            col += w;
        }
        let rg = self.any_grad(parts);
        Ok(self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor {
                shape: vec![m, n],
                data,
            },
            rg,
        ))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.matrix(x, "slice_cols")?;
        if len == 0 || start + len > n {
            return Err(Error::shape("slice_cols", &[m, n], &[start, len]));
        }
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&xv[r * n + start..r * n + start + len]);
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Op::SliceCols { x, start },
            Tensor {
                shape: vec![m, len],
                data,
            },
            rg,
        ))
    }

    /// Stacks `rows` copies of a vector (or 1×n matrix) into an `rows×n` matrix.
    pub fn repeat_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        if rows == 0 {
            return Err(Error::InvalidArgument("repeat_rows with zero rows".into()));
        }
        let xv = self.value(x).data();
        let n = xv.len();
        let data = xv.repeat(rows);
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Op::RepeatRows(x),
            Tensor {
                shape: vec![rows, n],
                data,
            },
            rg,
        ))
    }

    /// Selects rows of a matrix by index (indices may repeat).
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.matrix(x, "gather_rows")?;
        if rows.is_empty() || rows.iter().any(|&r| r >= m) {
            return Err(Error::shape("gather_rows", &[m, n], &[rows.len()]));
        }
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            data.extend_from_slice(&xv[r * n..(r + 1) * n]);
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Op::GatherRows { x, rows: rows.to_vec() },
            Tensor {
                shape: vec![rows.len(), n],
                data,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.any_grad(&[x]);
        self.push(Op::Sum(x), Tensor::scalar(s), rg)
    }

    /// Weighted multi-quantile pinball loss,
    /// `Σ_r weights[r] Σ_j QL(targets[r], pred[r][j]; quantiles[j])`, where
    /// `QL(y, ŷ; q) = q(y−ŷ)₊ + (1−q)(ŷ−y)₊`.
    ///
    /// At `ŷ = y` the gradient takes the over-forecast value `1−q`.
    pub fn pinball(&mut self, pred: Var, targets: &[f64], weights: &[f64], quantiles: &[f64]) -> Result<Var> {
        let (m, nq) = self.matrix(pred, "pinball")?;
        if targets.len() != m || weights.len() != m || quantiles.len() != nq {
            return Err(Error::shape(
                "pinball",
                &[m, nq],
                &[targets.len(), weights.len(), quantiles.len()],
            ));
        }
        let pv = self.value(pred).data();
        let mut total = 0.0;
        for r in 0..m {
            if weights[r] == 0.0 {
                continue;
            }
            let row: f64 = quantiles
                .iter()
                .enumerate()
                .map(|(j, &q)| pinball_value(targets[r], pv[r * nq + j], q))
                .sum();
            total += weights[r] * row;
        }
        let rg = self.any_grad(&[pred]);
        Ok(self.push(
            Op::Pinball {
                pred,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                quantiles: quantiles.to_vec(),
            },
            Tensor::scalar(total),
            rg,
        ))
    }

    /// Reverse sweep from a one-element `loss`, returning `∂loss/∂node` for
    /// every node that requires a gradient and is reachable from `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let len = self.nodes[v.0].value.numel();
            let g = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(g);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = node.value.dims2().1;
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        let grow = &gout[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(g, b)| g * b).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..m {
                        let grow = &gout[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (g, go) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *g += aip * go;
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (m, n) = self.value(*a).dims2();
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += gout[j * m + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |g| g.iter_mut().zip(gout).for_each(|(g, o)| *g += o));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |g| {
                    for ((g, o), y) in g.iter_mut().zip(gout).zip(bv) {
                        *g += o * y;
                    }
                });
                acc(*b, &mut |g| {
                    for ((g, o), x) in g.iter_mut().zip(gout).zip(av) {
                        *g += o * x;
                    }
                });
            }
            Op::Scale(a, f) => {
                acc(*a, &mut |g| g.iter_mut().zip(gout).for_each(|(g, o)| *g += f * o));
            }
            Op::ScaleRows(a, factors) => {
                let n = node.value.dims2().1;
                acc(*a, &mut |g| {
                    for (r, f) in factors.iter().enumerate() {
                        for c in 0..n {
                            g[r * n + c] += f * gout[r * n + c];
                        }
                    }
                });
            }
            Op::AddRowBias(x, b) => {
                let n = node.value.dims2().1;
                acc(*x, &mut |g| g.iter_mut().zip(gout).for_each(|(g, o)| *g += o));
                acc(*b, &mut |g| {
                    for row in gout.chunks(n) {
                        g.iter_mut().zip(row).for_each(|(g, o)| *g += o);
                    }
                });
            }
            Op::AddChannelBias(x, b) => {
                let t = node.value.dims2().1;
                acc(*x, &mut |g| g.iter_mut().zip(gout).for_each(|(g, o)| *g += o));
                acc(*b, &mut |g| {
                    for (gb, row) in g.iter_mut().zip(gout.chunks(t)) {
                        *gb += row.iter().sum::<f64>();
                    }
                });
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                acc(*a, &mut |g| {
                    for ((g, o), x) in g.iter_mut().zip(gout).zip(av) {
                        if *x > 0.0 {
                            *g += o;
                        }
                    }
                });
            }
            Op::Conv1d { x, kernel, dilation } => {
                let (cin, len) = self.value(*x).dims2();
                let ks = self.value(*kernel).shape();
                let (cout, k) = (ks[0], ks[2]);
                let xv = self.value(*x).data();
                let wv = self.value(*kernel).data();
                acc(*x, &mut |gx| {
                    for o in 0..cout {
                        let grow = &gout[o * len..(o + 1) * len];
                        for i in 0..cin {
                            let gxrow = &mut gx[i * len..(i + 1) * len];
                            for j in 0..k {
                                let w = wv[(o * cin + i) * k + j];
                                let off = (k - 1 - j) * dilation;
                                if off >= len {
                                    continue;
                                }
                                for (gx, go) in gxrow[..len - off].iter_mut().zip(&grow[off..]) {
                                    *gx += w * go;
                                }
                            }
                        }
                    }
                });
                acc(*kernel, &mut |gw| {
                    for o in 0..cout {
                        let grow = &gout[o * len..(o + 1) * len];
                        for i in 0..cin {
                            let xrow = &xv[i * len..(i + 1) * len];
                            for j in 0..k {
                                let off = (k - 1 - j) * dilation;
                                if off >= len {
                                    continue;
                                }
                                gw[(o * cin + i) * k + j] += grow[off..]
                                    .iter()
                                    .zip(&xrow[..len - off])
                                    .map(|(g, x)| g * x)
                                    .sum::<f64>();
                            }
                        }
                    }
                });
            }
            Op::SoftmaxMasked(logits) => {
                let n = *node.value.shape().last().unwrap_or(&1);
                let yv = node.value.data();
                acc(*logits, &mut |g| {
                    for ((grow, yrow), orow) in g.chunks_mut(n).zip(yv.chunks(n)).zip(gout.chunks(n)) {
                        let dot: f64 = yrow.iter().zip(orow).map(|(y, o)| y * o).sum();
                        for ((g, y), o) in grow.iter_mut().zip(yrow).zip(orow) {
                            *g += y * (o - dot);
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (m, n) = node.value.dims2();
                let mut col = 0;
                for &p in parts {
                    let w = self.value(p).dims2().1;
                    acc(p, &mut |g| {
                        for r in 0..m {
                            for c in 0..w {
                                g[r * w + c] += gout[r * n + col + c];
                            }
                        }
                    });
                    col += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (m, len) = node.value.dims2();
                let n = self.value(*x).dims2().1;
                acc(*x, &mut |g| {
                    for r in 0..m {
                        for c in 0..len {
                            g[r * n + start + c] += gout[r * len + c];
                        }
                    }
                });
            }
            Op::RepeatRows(x) => {
                let n = self.value(*x).numel();
                acc(*x, &mut |g| {
                    for row in gout.chunks(n) {
                        g.iter_mut().zip(row).for_each(|(g, o)| *g += o);
                    }
                });
            }
            Op::GatherRows { x, rows } => {
                let n = node.value.dims2().1;
                acc(*x, &mut |g| {
                    for (k, &r) in rows.iter().enumerate() {
                        for c in 0..n {
                            g[r * n + c] += gout[k * n + c];
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let s = gout[0];
                acc(*x, &mut |g| g.iter_mut().for_each(|g| *g += s));
            }
            Op::Pinball {
                pred,
                targets,
                weights,
                quantiles,
            } => {
                let s = gout[0];
                let nq = quantiles.len();
                let pv = self.value(*pred).data();
                acc(*pred, &mut |g| {
                    for (r, (&y, &w)) in targets.iter().zip(weights).enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        for (j, &q) in quantiles.iter().enumerate() {
                            g[r * nq + j] += s * w * pinball_slope(y, pv[r * nq + j], q);
                        }
                    }
                });
            }
        }
    }
}

pub(crate) fn pinball_value(y: f64, y_hat: f64, q: f64) -> f64 {
    let diff = y - y_hat;
    if diff > 0.0 {
        q * diff
    } else {
        (q - 1.0) * diff
    }
}

/// `∂QL/∂ŷ`: `−q` when under-forecasting, `1−q` otherwise (including the kink).
pub(crate) fn pinball_slope(y: f64, y_hat: f64, q: f64) -> f64 {
    if y_hat < y {
        -q
    } else {
        1.0 - q
    }
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences with the given step. `build` receives one trainable leaf per
/// input and returns the loss. Returns the largest relative error
/// `|a − n| / max(|a|, |n|, floor)` over every input element.
pub fn gradient_check(
    inputs: &[Tensor],
    step: f64,
    floor: f64,
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let mut worst = 0.0f64;
    let mut perturbed = inputs.to_vec();
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; t.numel()]);
        for j in 0..t.numel() {
            let x = t.data()[j];
            perturbed[i].data_mut()[j] = x + step;
            let up = eval(&perturbed)?;
            perturbed[i].data_mut()[j] = x - step;
            let down = eval(&perturbed)?;
            perturbed[i].data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    fn conv(x: &[f64], kernel: &[f64], dilation: usize) -> Vec<f64> {
        let mut g = Graph::new();
        let xv = g.constant(Tensor::new([1, x.len()], x.to_vec()).unwrap());
        let kv = g.constant(Tensor::new([1, 1, kernel.len()], kernel.to_vec()).unwrap());
        let y = g.conv1d_causal(xv, kv, dilation).unwrap();
        g.value(y).data().to_vec()
    }

    /// Sliding-window oracle: y[t] = Σ_j w[j]·x[t − (k−1−j)·d].
    fn conv_oracle(x: &[f64], kernel: &[f64], dilation: usize) -> Vec<f64> {
        let k = kernel.len();
        (0..x.len())
            .map(|t| {
                (0..k)
                    .filter_map(|j| {
                        let back = (k - 1 - j) * dilation;
                        (back <= t).then(|| kernel[j] * x[t - back])
                    })
                    .sum()
            })
            .collect()
    }

    fn softmax_row(logits: &[f64], mask: &[f64]) -> Vec<f64> {
        let mut g = Graph::new();
        let l = g.constant(Tensor::new([logits.len()], logits.to_vec()).unwrap());
        let y = g
            .softmax_masked(l, &Tensor::new([mask.len()], mask.to_vec()).unwrap())
            .unwrap();
        g.value(y).data().to_vec()
    }

    #[test]
    fn tensor_rejects_bad_shapes() {
        assert!(Tensor::new([2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new([0, 3], vec![]).is_err());
        assert_eq!(Tensor::scalar(2.5).item(), 2.5);
    }

    #[test]
    fn matmul_identity_and_products() {
        let mut g = Graph::new();
        let eye = g.constant(m(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let b = g.constant(m(&[&[3.0, -1.0], &[2.0, 5.0]]));
        let y = g.matmul(eye, b).unwrap();
        assert_eq!(g.value(y), g.value(b));

        let a = g.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let ones = g.constant(m(&[&[1.0], &[1.0]]));
        let y = g.matmul(a, ones).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 7.0]);

        let z = g.constant(Tensor::zeros([2, 3]));
        let y = g.matmul(a, z).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros([2, 3]));
        let b = g.constant(Tensor::zeros([2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
        match g.matmul(a, b).unwrap_err() {
            Error::Shape { lhs, rhs, .. } => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn conv_examples() {
        assert_eq!(conv(&[1.0, 2.0, 3.0], &[1.0, 1.0], 1), vec![1.0, 3.0, 5.0]);
        assert_eq!(conv(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
        for d in [1, 2, 5] {
            assert_eq!(conv(&[4.0, -1.0, 2.5], &[1.0], d), vec![4.0, -1.0, 2.5]);
        }
    }

    #[test]
    fn conv_matches_sliding_window_oracle() {
        let x = [0.3, -1.2, 2.0, 0.7, 0.0, 5.5, -0.4, 1.1, 0.9];
        let k = [0.5, -0.25, 2.0];
        for d in [1, 2, 3, 4, 8] {
            let got = conv(&x, &k, d);
            let want = conv_oracle(&x, &k, d);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_errors() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros([2, 5]));
        let k = g.constant(Tensor::zeros([1, 3, 2]));
        assert!(matches!(g.conv1d_causal(x, k, 1), Err(Error::Shape { .. })));
        let k = g.constant(Tensor::zeros([1, 2, 2]));
        assert!(matches!(g.conv1d_causal(x, k, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn relu_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new([3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let x = g.constant(Tensor::new([2], vec![-3.0, -0.5]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0]);
        let x = g.constant(Tensor::new([2], vec![3.0, 0.5]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[3.0, 0.5]);
    }

    #[test]
    fn relu_gradient_gates_on_sign() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new([3], vec![-1.0, 0.5, 2.0]).unwrap());
        let y = g.relu(x);
        let l = g.sum(y);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(x), vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_row(&[0.0, 0.0], &[1.0, 1.0]), vec![0.5, 0.5]);
        assert_eq!(softmax_row(&[5.0, 100.0], &[1.0, 0.0]), vec![1.0, 0.0]);
        assert_eq!(softmax_row(&[0.0, 0.0], &[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn softmax_rejects_non_binary_mask() {
        let mut g = Graph::new();
        let l = g.constant(Tensor::zeros([2]));
        assert!(g.softmax_masked(l, &Tensor::new([2], vec![0.5, 1.0]).unwrap()).is_err());
    }

    #[test]
    fn backward_examples() {
        let mut g = Graph::new();
        let p = g.param(Tensor::new([2, 3], vec![0.1, -2.0, 3.0, 4.0, 0.0, 1.5]).unwrap());
        let l = g.sum(p);
        assert_eq!(g.backward(l).unwrap().wrt(p), vec![1.0; 6]);

        let mut g = Graph::new();
        let p = g.param(Tensor::new([2], vec![1.0, 2.0]).unwrap());
        let sq = g.mul(p, p).unwrap();
        let s = g.sum(sq);
        let l = g.scale(s, 0.5);
        assert_eq!(g.backward(l).unwrap().wrt(p), vec![1.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let p = g.param(Tensor::zeros([2]));
        assert!(g.backward(p).is_err());
    }

    #[test]
    fn pinball_kink_takes_over_forecast_slope() {
        let mut g = Graph::new();
        let p = g.param(Tensor::new([1, 2], vec![3.0, 3.0]).unwrap());
        let l = g.pinball(p, &[3.0], &[1.0], &[0.5, 0.9]).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let grads = g.backward(l).unwrap().wrt(p);
        assert!((grads[0] - 0.5).abs() < 1e-15);
        assert!((grads[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn graph_inputs_precede_outputs() {
        let mut g = Graph::new();
        let a = g.param(Tensor::zeros([2, 2]));
        let b = g.relu(a);
        let c = g.sum(b);
        assert!(a.index() < b.index() && b.index() < c.index());
        assert_eq!(g.op_name(b), "relu");
        assert!(g.requires_grad(c));
    }
}
