use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::matrix::{gemm_acc, Matrix, Scalar};
use super::rng::RngStream;
use super::AutodiffError;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Compressed sparse row matrix, used for the fixed normalized adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Build from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_by_key(|a| (a.0, a.1));
        let mut indptr = vec![0; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet out of range");
            if last == Some((r, c)) {
                let l = values.len() - 1;
                values[l] = values[l] + v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for p in self.indptr[r]..self.indptr[r + 1] {
                m.set(r, self.indices[p], m.get(r, self.indices[p]) + self.values[p]);
            }
        }
        m
    }

    pub fn cast<U: Scalar>(&self) -> CsrMatrix<U> {
        CsrMatrix {
            rows: self.rows,
            cols: self.cols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| U::of(v.to_f64().unwrap_or(f64::NAN))).collect(),
        }
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Matrix<T>,
        inv_std: Vec<T>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    SegmentSum {
        x: Var,
        segment: Arc<[usize]>,
    },
    SegmentMean {
        x: Var,
        segment: Arc<[usize]>,
        counts: Vec<usize>,
    },
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    SparseMatMul {
        adj: Arc<CsrMatrix<T>>,
        x: Var,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        blocks: Arc<[Range<usize>]>,
        heads: usize,
        probs: Vec<Matrix<T>>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of tensor operations; parents always precede children.
#[derive(Debug)]
pub struct Tape<T: Scalar> {
    id: u64,
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Matrix<T>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }

    /// Gradient for `var`, or zeros of `shape` when it received none.
    pub fn take_or_zeros(&mut self, var: Var, shape: (usize, usize)) -> Matrix<T> {
        if var.tape == self.tape {
            if let Some(g) = self.grads.get_mut(var.index).and_then(Option::take) {
                return g;
            }
        }
        Matrix::zeros(shape.0, shape.1)
    }
}

fn broadcastable(lhs: (usize, usize), rhs: (usize, usize)) -> bool {
    (rhs.0 == lhs.0 || rhs.0 == 1) && (rhs.1 == lhs.1 || rhs.1 == 1)
}

fn broadcast_zip<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, f: impl Fn(T, T) -> T) -> Matrix<T> {
    let (rows, cols) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Matrix::zeros(rows, cols);
    let bs = b.as_slice();
    for r in 0..rows {
        let brow = if br == 1 { 0 } else { r };
        let arow = a.row(r);
        let orow = out.row_mut(r);
        for c in 0..cols {
            let bv = bs[brow * bc + if bc == 1 { 0 } else { c }];
            orow[c] = f(arow[c], bv);
        }
    }
    out
}

/// Sum `grad` down to `shape` along broadcast axes.
fn reduce_to<T: Scalar>(grad: Matrix<T>, shape: (usize, usize)) -> Matrix<T> {
    if grad.shape() == shape {
        return grad;
    }
    let mut out = Matrix::zeros(shape.0, shape.1);
    for r in 0..grad.rows() {
        let orow = if shape.0 == 1 { 0 } else { r };
        for c in 0..grad.cols() {
            let oc = if shape.1 == 1 { 0 } else { c };
            out.set(orow, oc, out.get(orow, oc) + grad.get(r, c));
        }
    }
    out
}

fn softmax_row_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total = total + *x;
    }
    for x in row.iter_mut() {
        *x = *x / total;
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn copy_block<T: Scalar>(src: &Matrix<T>, rows: Range<usize>, cols: Range<usize>) -> Matrix<T> {
    let mut out = Matrix::zeros(rows.len(), cols.len());
    for (i, r) in rows.enumerate() {
        out.row_mut(i).copy_from_slice(&src.row(r)[cols.clone()]);
    }
    out
}

fn add_block<T: Scalar>(dst: &mut Matrix<T>, rows: Range<usize>, col0: usize, src: &Matrix<T>) {
    for (i, r) in rows.enumerate() {
        let d = &mut dst.row_mut(r)[col0..col0 + src.cols()];
        for (a, b) in d.iter_mut().zip(src.row(i)) {
            *a = *a + *b;
        }
    }
}

/// Row-stochastic attention weights `softmax(q k^T * scale)` for one block.
fn attention_probs<T: Scalar>(q: &Matrix<T>, k: &Matrix<T>, scale: T) -> Matrix<T> {
    let mut s = q.matmul_t(false, k, true);
    for x in s.as_mut_slice() {
        *x = *x * scale;
    }
    for r in 0..s.rows() {
        softmax_row_in_place(s.row_mut(r));
    }
    s
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<(), AutodiffError> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(AutodiffError::ForeignTensor);
        }
        Ok(())
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.index].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Matrix<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> AutodiffError {
        AutodiffError::ShapeMismatch {
            op,
            lhs: self.shape(a),
            rhs: self.shape(b),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.check(a)?;
        self.check(b)?;
        if self.shape(a).1 != self.shape(b).0 {
            return Err(self.mismatch("matmul", a, b));
        }
        let value = self.value(a).matmul(self.value(b));
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// Elementwise `a + b`; `b` may broadcast along rows or columns.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise `a * b`; `b` may broadcast along rows or columns.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: fn(Var, Var) -> Op<T>,
    ) -> Result<Var, AutodiffError> {
        self.check(a)?;
        self.check(b)?;
        if !broadcastable(self.shape(a), self.shape(b)) {
            return Err(self.mismatch(name, a, b));
        }
        let value = broadcast_zip(self.value(a), self.value(b), f);
        Ok(self.push(value, op(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var, AutodiffError> {
        self.check(a)?;
        let value = self.value(a).map(|x| x * factor);
        Ok(self.push(value, Op::Scale(a, factor), &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.check(a)?;
        let value = self.value(a).map(|x| x.max(T::zero()));
        Ok(self.push(value, Op::Relu(a), &[a]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.check(a)?;
        let value = self.value(a).map(sigmoid);
        Ok(self.push(value, Op::Sigmoid(a), &[a]))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.check(a)?;
        let value = self.value(a).map(|x| x.tanh());
        Ok(self.push(value, Op::Tanh(a), &[a]))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.check(a)?;
        let value = self.value(a).map(|x| x.exp());
        Ok(self.push(value, Op::Exp(a), &[a]))
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.check(a)?;
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            softmax_row_in_place(value.row_mut(r));
        }
        Ok(self.push(value, Op::SoftmaxRows(a), &[a]))
    }

    /// Per-row normalization to zero mean and unit (population) variance, then
    /// `gamma * x + beta` with 1 x C `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, AutodiffError> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let (rows, cols) = self.shape(x);
        if self.shape(gamma) != (1, cols) {
            return Err(self.mismatch("layer_norm", x, gamma));
        }
        if self.shape(beta) != (1, cols) {
            return Err(self.mismatch("layer_norm", x, beta));
        }
        let xv = self.value(x);
        let n = T::of(cols as f64);
        let eps = T::of(LAYER_NORM_EPS);
        let mut normalized = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (o, &v) in normalized.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let g = self.value(gamma).row(0).to_vec();
        let b = self.value(beta).row(0).to_vec();
        let mut value = normalized.clone();
        for r in 0..rows {
            for ((o, gv), bv) in value.row_mut(r).iter_mut().zip(&g).zip(&b) {
                *o = *o * *gv + *bv;
            }
        }
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Inverted dropout. Evaluation mode returns `x` unchanged.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, rng: &mut RngStream) -> Result<Var, AutodiffError> {
        self.check(x)?;
        if !(0.0..1.0).contains(&p) {
            return Err(AutodiffError::InvalidArgument(format!("dropout rate {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.uniform() < p { T::zero() } else { keep })
            .collect();
        let xv = self.value(x);
        let data: Vec<T> = xv.as_slice().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Matrix::from_vec(xv.rows(), xv.cols(), data);
        Ok(self.push(value, Op::Dropout { x, mask }, &[x]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = *parts
            .first()
            .ok_or_else(|| AutodiffError::InvalidArgument("concat of nothing".into()))?;
        let cols = self.shape(first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            self.check(p)?;
            if self.shape(p).1 != cols {
                return Err(self.mismatch("concat_rows", first, p));
            }
            rows += self.shape(p).0;
            data.extend_from_slice(self.value(p).as_slice());
        }
        Ok(self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = *parts
            .first()
            .ok_or_else(|| AutodiffError::InvalidArgument("concat of nothing".into()))?;
        let rows = self.shape(first).0;
        let mut cols = 0;
        for &p in parts {
            self.check(p)?;
            if self.shape(p).0 != rows {
                return Err(self.mismatch("concat_cols", first, p));
            }
            cols += self.shape(p).1;
        }
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            for r in 0..rows {
                value.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Rows of `x` selected (with repetition allowed) by `index`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var, AutodiffError> {
        self.check(x)?;
        let xv = self.value(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= xv.rows()) {
            return Err(AutodiffError::InvalidArgument(format!(
                "row {bad} out of range for {} rows",
                xv.rows()
            )));
        }
        let mut data = Vec::with_capacity(index.len() * xv.cols());
        for &i in index {
            data.extend_from_slice(xv.row(i));
        }
        let value = Matrix::from_vec(index.len(), xv.cols(), data);
        Ok(self.push(
            value,
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            &[x],
        ))
    }

    pub fn slice_cols(&mut self, x: Var, cols: Range<usize>) -> Result<Var, AutodiffError> {
        self.check(x)?;
        let xv = self.value(x);
        if cols.end > xv.cols() || cols.start >= cols.end {
            return Err(AutodiffError::InvalidArgument(format!(
                "column range {cols:?} invalid for {} columns",
                xv.cols()
            )));
        }
        let value = copy_block(xv, 0..xv.rows(), cols.clone());
        Ok(self.push(value, Op::SliceCols { x, start: cols.start }, &[x]))
    }

    fn segment_counts(&self, x: Var, segment: &[usize], n_segments: usize) -> Result<Vec<usize>, AutodiffError> {
        if segment.len() != self.shape(x).0 {
            return Err(AutodiffError::InvalidArgument(format!(
                "segment ids cover {} rows, tensor has {}",
                segment.len(),
                self.shape(x).0
            )));
        }
        let mut counts = vec![0; n_segments];
        for &s in segment {
            *counts
                .get_mut(s)
                .ok_or_else(|| AutodiffError::InvalidArgument(format!("segment id {s} >= {n_segments}")))? += 1;
        }
        Ok(counts)
    }

    fn segment_total(&self, x: Var, segment: &[usize], n_segments: usize) -> Matrix<T> {
        let xv = self.value(x);
        let mut out = Matrix::zeros(n_segments, xv.cols());
        for (r, &s) in segment.iter().enumerate() {
            for (o, v) in out.row_mut(s).iter_mut().zip(xv.row(r)) {
                *o = *o + *v;
            }
        }
        out
    }

    pub fn segment_sum(&mut self, x: Var, segment: Arc<[usize]>, n_segments: usize) -> Result<Var, AutodiffError> {
        self.check(x)?;
        self.segment_counts(x, &segment, n_segments)?;
        let value = self.segment_total(x, &segment, n_segments);
        Ok(self.push(value, Op::SegmentSum { x, segment }, &[x]))
    }

    /// Per-segment row mean. Every segment must be non-empty.
    pub fn segment_mean(&mut self, x: Var, segment: Arc<[usize]>, n_segments: usize) -> Result<Var, AutodiffError> {
        self.check(x)?;
        let counts = self.segment_counts(x, &segment, n_segments)?;
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(AutodiffError::EmptySegment(empty));
        }
        let mut value = self.segment_total(x, &segment, n_segments);
        for (s, &c) in counts.iter().enumerate() {
            let inv = T::one() / T::of(c as f64);
            for v in value.row_mut(s) {
                *v = *v * inv;
            }
        }
        Ok(self.push(value, Op::SegmentMean { x, segment, counts }, &[x]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.check(a)?;
        let value = self.value(a).transpose();
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.check(a)?;
        let value = Matrix::scalar(self.value(a).sum());
        Ok(self.push(value, Op::Sum(a), &[a]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.check(a)?;
        let n = self.value(a).len();
        if n == 0 {
            return Err(AutodiffError::InvalidArgument("mean of empty tensor".into()));
        }
        let value = Matrix::scalar(self.value(a).sum() / T::of(n as f64));
        Ok(self.push(value, Op::Mean(a), &[a]))
    }

    /// Mean squared error between equally shaped tensors.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, AutodiffError> {
        self.check(pred)?;
        self.check(target)?;
        if self.shape(pred) != self.shape(target) {
            return Err(self.mismatch("mse", pred, target));
        }
        let p = self.value(pred);
        let t = self.value(target);
        let n = p.len();
        if n == 0 {
            return Err(AutodiffError::InvalidArgument("mse of empty tensors".into()));
        }
        let total: T = p.as_slice().iter().zip(t.as_slice()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let value = Matrix::scalar(total / T::of(n as f64));
        Ok(self.push(value, Op::Mse(pred, target), &[pred, target]))
    }

    /// `adj * x` for a fixed sparse matrix.
    pub fn sparse_matmul(&mut self, adj: Arc<CsrMatrix<T>>, x: Var) -> Result<Var, AutodiffError> {
        self.check(x)?;
        let xv = self.value(x);
        if adj.cols != xv.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "sparse_matmul",
                lhs: (adj.rows, adj.cols),
                rhs: xv.shape(),
            });
        }
        let mut value = Matrix::zeros(adj.rows, xv.cols());
        for r in 0..adj.rows {
            for p in adj.indptr[r]..adj.indptr[r + 1] {
                let a = adj.values[p];
                let src = xv.row(adj.indices[p]);
                for (o, s) in value.row_mut(r).iter_mut().zip(src) {
                    *o = *o + a * *s;
                }
            }
        }
        Ok(self.push(value, Op::SparseMatMul { adj, x }, &[x]))
    }

    /// Multi-head scaled dot-product attention restricted to row blocks.
    ///
    /// Rows in different `blocks` never attend to each other. Columns are split
    /// into `heads` equal slices of width `d_k`; scores are scaled by `1/sqrt(d_k)`.
    pub fn block_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        blocks: Arc<[Range<usize>]>,
        heads: usize,
    ) -> Result<Var, AutodiffError> {
        for x in [q, k, v] {
            self.check(x)?;
        }
        let (n, d) = self.shape(q);
        if self.shape(k) != (n, d) {
            return Err(self.mismatch("attention", q, k));
        }
        if self.shape(v) != (n, d) {
            return Err(self.mismatch("attention", q, v));
        }
        if heads == 0 || d % heads != 0 {
            return Err(AutodiffError::InvalidArgument(format!("{d} columns not divisible into {heads} heads")));
        }
        let mut covered = 0;
        for b in blocks.iter() {
            if b.start != covered || b.end <= b.start {
                return Err(AutodiffError::InvalidArgument("attention blocks must tile the rows".into()));
            }
            covered = b.end;
        }
        if covered != n {
            return Err(AutodiffError::InvalidArgument("attention blocks must tile the rows".into()));
        }
        let dk = d / heads;
        let scale = T::one() / T::of(dk as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut out = Matrix::zeros(n, d);
        let mut probs = Vec::with_capacity(blocks.len() * heads);
        for b in blocks.iter() {
            for h in 0..heads {
                let cols = h * dk..(h + 1) * dk;
                let qb = copy_block(qv, b.clone(), cols.clone());
                let kb = copy_block(kv, b.clone(), cols.clone());
                let vb = copy_block(vv, b.clone(), cols.clone());
                let p = attention_probs(&qb, &kb, scale);
                let o = p.matmul(&vb);
                add_block(&mut out, b.clone(), cols.start, &o);
                probs.push(p);
            }
        }
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                blocks,
                heads,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Attention weights stored by a [`Tape::block_attention`] node, one matrix
    /// per (block, head) in block-major order.
    pub fn attention_weights(&self, v: Var) -> Option<&[Matrix<T>]> {
        if v.tape != self.id {
            return None;
        }
        match &self.nodes.get(v.index)?.op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Reverse sweep from a scalar `loss`. A tape can be swept once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        self.check(loss)?;
        if self.consumed {
            return Err(AutodiffError::TapeConsumed);
        }
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(AutodiffError::NotScalarLoss { shape });
        }
        self.consumed = true;

        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.index] = Some(Matrix::scalar(T::one()));

        for i in (0..=loss.index).rev() {
            let Some(grad) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &grad, &mut grads);
            grads[i] = Some(grad);
        }
        // drop gradients of constants so callers only see inputs that asked for one
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { tape: self.id, grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    fn propagate(&self, i: usize, grad: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let mut accumulate = |v: Var, g: Matrix<T>| match &mut grads[v.index] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        };
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let bv = self.value(*b);
                    accumulate(*a, grad.matmul_t(false, bv, true));
                }
                if self.needs(*b) {
                    let av = self.value(*a);
                    accumulate(*b, av.matmul_t(true, grad, false));
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                if self.needs(*a) {
                    accumulate(*a, grad.clone());
                }
                if self.needs(*b) {
                    let g = if matches!(node.op, Op::Sub(..)) { grad.map(|x| -x) } else { grad.clone() };
                    accumulate(*b, reduce_to(g, self.shape(*b)));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    accumulate(*a, broadcast_zip(grad, bv, |g, y| g * y));
                }
                if self.needs(*b) {
                    let mut full = grad.clone();
                    for (f, x) in full.as_mut_slice().iter_mut().zip(av.as_slice()) {
                        *f = *f * *x;
                    }
                    accumulate(*b, reduce_to(full, bv.shape()));
                }
            }
            Op::Scale(a, factor) => accumulate(*a, grad.map(|g| g * *factor)),
            Op::Relu(a) => {
                let mut g = grad.clone();
                for (gv, y) in g.as_mut_slice().iter_mut().zip(out.as_slice()) {
                    if *y <= T::zero() {
                        *gv = T::zero();
                    }
                }
                accumulate(*a, g);
            }
            Op::Sigmoid(a) => {
                let mut g = grad.clone();
                for (gv, &y) in g.as_mut_slice().iter_mut().zip(out.as_slice()) {
                    *gv = *gv * y * (T::one() - y);
                }
                accumulate(*a, g);
            }
            Op::Tanh(a) => {
                let mut g = grad.clone();
                for (gv, &y) in g.as_mut_slice().iter_mut().zip(out.as_slice()) {
                    *gv = *gv * (T::one() - y * y);
                }
                accumulate(*a, g);
            }
            Op::Exp(a) => {
                let mut g = grad.clone();
                for (gv, &y) in g.as_mut_slice().iter_mut().zip(out.as_slice()) {
                    *gv = *gv * y;
                }
                accumulate(*a, g);
            }
            Op::SoftmaxRows(a) => {
                let mut g = grad.clone();
                for r in 0..g.rows() {
                    let y = out.row(r);
                    let dot: T = g.row(r).iter().zip(y).map(|(a, b)| *a * *b).sum();
                    for (gv, &yv) in g.row_mut(r).iter_mut().zip(y) {
                        *gv = yv * (*gv - dot);
                    }
                }
                accumulate(*a, g);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let (rows, cols) = normalized.shape();
                let gv = self.value(*gamma).row(0).to_vec();
                if self.needs(*x) {
                    let n = T::of(cols as f64);
                    let mut dx = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        let xhat = normalized.row(r);
                        let dxhat: Vec<T> = grad.row(r).iter().zip(&gv).map(|(a, b)| *a * *b).collect();
                        let s1: T = dxhat.iter().copied().sum();
                        let s2: T = dxhat.iter().zip(xhat).map(|(a, b)| *a * *b).sum();
                        for ((o, d), xh) in dx.row_mut(r).iter_mut().zip(&dxhat).zip(xhat) {
                            *o = inv_std[r] / n * (n * *d - s1 - *xh * s2);
                        }
                    }
                    accumulate(*x, dx);
                }
                if self.needs(*gamma) {
                    let mut dg = Matrix::zeros(1, cols);
                    for r in 0..rows {
                        for ((o, g), xh) in dg.row_mut(0).iter_mut().zip(grad.row(r)).zip(normalized.row(r)) {
                            *o = *o + *g * *xh;
                        }
                    }
                    accumulate(*gamma, dg);
                }
                if self.needs(*beta) {
                    accumulate(*beta, reduce_to(grad.clone(), (1, cols)));
                }
            }
            Op::Dropout { x, mask } => {
                let mut g = grad.clone();
                for (gv, m) in g.as_mut_slice().iter_mut().zip(mask) {
                    *gv = *gv * *m;
                }
                accumulate(*x, g);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    if self.needs(p) {
                        let g = copy_block(grad, offset..offset + rows, 0..cols);
                        accumulate(p, g);
                    }
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    if self.needs(p) {
                        accumulate(p, copy_block(grad, 0..rows, offset..offset + cols));
                    }
                    offset += cols;
                }
            }
            Op::GatherRows { x, index } => {
                let (rows, cols) = self.shape(*x);
                let mut g = Matrix::zeros(rows, cols);
                for (r, &src) in index.iter().enumerate() {
                    for (o, v) in g.row_mut(src).iter_mut().zip(grad.row(r)) {
                        *o = *o + *v;
                    }
                }
                accumulate(*x, g);
            }
            Op::SliceCols { x, start } => {
                let (rows, cols) = self.shape(*x);
                let mut g = Matrix::zeros(rows, cols);
                add_block(&mut g, 0..rows, *start, grad);
                accumulate(*x, g);
            }
            Op::SegmentSum { x, segment } => {
                let (rows, cols) = self.shape(*x);
                let mut g = Matrix::zeros(rows, cols);
                for (r, &s) in segment.iter().enumerate() {
                    g.row_mut(r).copy_from_slice(grad.row(s));
                }
                accumulate(*x, g);
            }
            Op::SegmentMean { x, segment, counts } => {
                let (rows, cols) = self.shape(*x);
                let mut g = Matrix::zeros(rows, cols);
                for (r, &s) in segment.iter().enumerate() {
                    let inv = T::one() / T::of(counts[s] as f64);
                    for (o, v) in g.row_mut(r).iter_mut().zip(grad.row(s)) {
                        *o = *v * inv;
                    }
                }
                accumulate(*x, g);
            }
            Op::Transpose(a) => accumulate(*a, grad.transpose()),
            Op::Sum(a) => {
                let (rows, cols) = self.shape(*a);
                accumulate(*a, Matrix::filled(rows, cols, grad.get(0, 0)));
            }
            Op::Mean(a) => {
                let (rows, cols) = self.shape(*a);
                let n = T::of((rows * cols) as f64);
                accumulate(*a, Matrix::filled(rows, cols, grad.get(0, 0) / n));
            }
            Op::Mse(pred, target) => {
                let (p, t) = (self.value(*pred), self.value(*target));
                let scale = T::of(2.0) * grad.get(0, 0) / T::of(p.len() as f64);
                let diff: Vec<T> = p.as_slice().iter().zip(t.as_slice()).map(|(a, b)| (*a - *b) * scale).collect();
                let d = Matrix::from_vec(p.rows(), p.cols(), diff);
                if self.needs(*target) {
                    accumulate(*target, d.map(|x| -x));
                }
                if self.needs(*pred) {
                    accumulate(*pred, d);
                }
            }
            Op::SparseMatMul { adj, x } => {
                let (rows, cols) = self.shape(*x);
                let mut g = Matrix::zeros(rows, cols);
                for r in 0..adj.rows {
                    for p in adj.indptr[r]..adj.indptr[r + 1] {
                        let a = adj.values[p];
                        let dst = adj.indices[p];
                        for (o, s) in g.row_mut(dst).iter_mut().zip(grad.row(r)) {
                            *o = *o + a * *s;
                        }
                    }
                }
                accumulate(*x, g);
            }
            Op::Attention {
                q,
                k,
                v,
                blocks,
                heads,
                probs,
            } => {
                let (n, d) = self.shape(*q);
                let dk = d / heads;
                let scale = T::one() / T::of(dk as f64).sqrt();
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let mut dq = Matrix::zeros(n, d);
                let mut dk_m = Matrix::zeros(n, d);
                let mut dv = Matrix::zeros(n, d);
                let mut pi = 0;
                for b in blocks.iter() {
                    for h in 0..*heads {
                        let cols = h * dk..(h + 1) * dk;
                        let p = &probs[pi];
                        pi += 1;
                        let d_o = copy_block(grad, b.clone(), cols.clone());
                        let vb = copy_block(vv, b.clone(), cols.clone());
                        let qb = copy_block(qv, b.clone(), cols.clone());
                        let kb = copy_block(kv, b.clone(), cols.clone());
                        add_block(&mut dv, b.clone(), cols.start, &p.matmul_t(true, &d_o, false));
                        let mut ds = d_o.matmul_t(false, &vb, true);
                        for r in 0..ds.rows() {
                            let dot: T = ds.row(r).iter().zip(p.row(r)).map(|(a, b)| *a * *b).sum();
                            for (x, pv) in ds.row_mut(r).iter_mut().zip(p.row(r)) {
                                *x = *pv * (*x - dot) * scale;
                            }
                        }
                        let mut gq = Matrix::zeros(b.len(), dk);
                        gemm_acc(&ds, false, &kb, false, &mut gq, T::zero());
                        add_block(&mut dq, b.clone(), cols.start, &gq);
                        add_block(&mut dk_m, b.clone(), cols.start, &ds.matmul_t(true, &qb, false));
                    }
                }
                if self.needs(*q) {
                    accumulate(*q, dq);
                }
                if self.needs(*k) {
                    accumulate(*k, dk_m);
                }
                if self.needs(*v) {
                    accumulate(*v, dv);
                }
            }
        }
    }
}
