//! Reverse-mode differentiation over 2-D tensors.
//!
//! Vectors are 1×n or n×1 matrices. Every op checks its output for NaN/Inf
//! and reports a numeric fault instead of propagating it.

use crate::tensor::{Matrix, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: index {index} out of range for {len} rows")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("numeric fault: non-finite value produced by {0}")]
    NumericFault(&'static str),
    #[error("backward needs a 1x1 loss, got {0:?}")]
    NonScalarLoss((usize, usize)),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

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

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    /// `Axis::Rows` normalizes each row, `Axis::Cols` each column.
    Softmax(Var, Axis),
    SegmentSoftmax(Var, Vec<usize>),
    RowSum(Var),
    ColumnSum(Var),
    SumAll(Var),
    MeanRows(Var),
    MaxRows(Var, Vec<usize>),
    SquaredL2Diff(Var, Var),
    CrossEntropy(Var, Matrix<T>),
    ConcatCols(Var, Var),
    IndexRows(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    ScaleRows(Var, Var),
    RowDot(Var, Var),
    /// Exponent is the clamped value; `bool` marks an active clamp.
    SignedPow(Var, Var, T, bool),
    Recip(Var),
    Transpose(Var),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records operations in creation order, which is a topological order.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    /// Non-fatal notes such as clamped exponents.
    pub diagnostics: Vec<String>,
}

/// Gradients of a scalar loss with respect to every recorded value.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` for values that do not require gradients or do not reach the loss.
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

const SIGNED_POW_MIN: f64 = 1e-3;

fn same(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(AutodiffError::Shape { op, left: a, right: b })
    }
}

fn check_index(op: &'static str, idx: &[usize], len: usize) -> Result<()> {
    match idx.iter().find(|&&i| i >= len) {
        Some(&index) => Err(AutodiffError::Index { op, index, len }),
        None => Ok(()),
    }
}

fn softmax_slice<T: Scalar>(xs: &mut [T]) {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in xs.iter_mut() {
        *x /= s;
    }
}

fn signed_pow<T: Scalar>(x: T, p: T) -> T {
    if x == T::zero() {
        T::zero()
    } else {
        x.signum() * x.abs().powf(p)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), diagnostics: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// A trainable input.
    pub fn leaf(&mut self, value: Matrix<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// A detached input; it never receives a gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Matrix<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(AutodiffError::NumericFault(name));
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(AutodiffError::Shape { op: "matmul", left: sa, right: sb });
        }
        let v = self.value(a).matmul(self.value(b));
        self.push("matmul", v, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same("add", self.shape(a), self.shape(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push("add", v, Op::Add(a, b), &[a, b])
    }

    /// Adds the 1×c row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb != (1, sa.1) {
            return Err(AutodiffError::Shape { op: "add_row", left: sa, right: sb });
        }
        let mut v = self.value(a).clone();
        let b = self.value(bias).data.clone();
        for r in 0..sa.0 {
            for (x, &y) in v.row_mut(r).iter_mut().zip(&b) {
                *x += y;
            }
        }
        self.push("add_row", v, Op::AddRow(a, bias), &[a, bias])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same("sub", self.shape(a), self.shape(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push("sub", v, Op::Sub(a, b), &[a, b])
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same("mul", self.shape(a), self.shape(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push("mul", v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let v = self.value(a).map(|x| x * s);
        self.push("scale", v, Op::Scale(a, s), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(T::tanh);
        self.push("tanh", v, Op::Tanh(a), &[a])
    }

    pub fn softmax(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let x = self.value(a);
        let v = match axis {
            Axis::Rows => {
                let mut v = x.clone();
                for r in 0..v.rows {
                    softmax_slice(v.row_mut(r));
                }
                v
            }
            Axis::Cols => {
                let mut t = x.transpose();
                for r in 0..t.rows {
                    softmax_slice(t.row_mut(r));
                }
                t.transpose()
            }
        };
        self.push("softmax", v, Op::Softmax(a, axis), &[a])
    }

    /// Softmax of an n×1 column within groups sharing a segment id.
    pub fn segment_softmax(&mut self, a: Var, segments: &[usize]) -> Result<Var> {
        let s = self.shape(a);
        if s.1 != 1 || s.0 != segments.len() {
            return Err(AutodiffError::Shape {
                op: "segment_softmax",
                left: s,
                right: (segments.len(), 1),
            });
        }
        let x = &self.value(a).data;
        let nseg = segments.iter().max().map_or(0, |m| m + 1);
        let mut mx = vec![T::neg_infinity(); nseg];
        for (&xi, &g) in x.iter().zip(segments) {
            mx[g] = mx[g].max(xi);
        }
        let mut sum = vec![T::zero(); nseg];
        let mut e: Vec<T> = x.iter().zip(segments).map(|(&xi, &g)| (xi - mx[g]).exp()).collect();
        for (&ei, &g) in e.iter().zip(segments) {
            sum[g] += ei;
        }
        for (ei, &g) in e.iter_mut().zip(segments) {
            *ei /= sum[g];
        }
        let v = Matrix::from_vec(s.0, 1, e);
        self.push("segment_softmax", v, Op::SegmentSoftmax(a, segments.to_vec()), &[a])
    }

    /// Sum of each row, as an r×1 column.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let v = Matrix::from_vec(x.rows, 1, (0..x.rows).map(|r| x.row(r).iter().copied().sum()).collect());
        self.push("row_sum", v, Op::RowSum(a), &[a])
    }

    /// Sum of each column, as a 1×c row.
    pub fn column_sum(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut v = Matrix::zeros(1, x.cols);
        for r in 0..x.rows {
            for (o, &y) in v.data.iter_mut().zip(x.row(r)) {
                *o += y;
            }
        }
        self.push("column_sum", v, Op::ColumnSum(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Matrix::scalar(self.value(a).data.iter().copied().sum());
        self.push("sum", v, Op::SumAll(a), &[a])
    }

    /// Mean over rows, as a 1×c row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rows == 0 {
            return Err(AutodiffError::Shape { op: "mean_rows", left: x.shape(), right: (1, x.cols) });
        }
        let n = T::from_usize(x.rows).unwrap();
        let mut v = Matrix::zeros(1, x.cols);
        for r in 0..x.rows {
            for (o, &y) in v.data.iter_mut().zip(x.row(r)) {
                *o += y;
            }
        }
        let v = v.map(|s| s / n);
        self.push("mean_rows", v, Op::MeanRows(a), &[a])
    }

    /// Column-wise maximum over rows; ties resolve to the first row.
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rows == 0 {
            return Err(AutodiffError::Shape { op: "max_rows", left: x.shape(), right: (1, x.cols) });
        }
        let mut arg = vec![0usize; x.cols];
        let mut v = Matrix::from_vec(1, x.cols, x.row(0).to_vec());
        for r in 1..x.rows {
            for (c, &y) in x.row(r).iter().enumerate() {
                if y > v.data[c] {
                    v.data[c] = y;
                    arg[c] = r;
                }
            }
        }
        self.push("max_rows", v, Op::MaxRows(a, arg), &[a])
    }

    /// `||a - b||^2` summed over all entries.
    pub fn squared_l2_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        same("squared_l2_diff", self.shape(a), self.shape(b))?;
        let s = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        self.push("squared_l2_diff", Matrix::scalar(s), Op::SquaredL2Diff(a, b), &[a, b])
    }

    /// Mean over rows of `-sum_c target_c * log softmax(logits)_c`.
    pub fn cross_entropy_with_softmax(&mut self, logits: Var, target: &Matrix<T>) -> Result<Var> {
        let x = self.value(logits);
        same("cross_entropy_with_softmax", x.shape(), target.shape())?;
        let mut total = T::zero();
        for r in 0..x.rows {
            let row = x.row(r);
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&z| (z - m).exp()).sum::<T>().ln();
            for (&z, &t) in row.iter().zip(target.row(r)) {
                total += t * (lse - z);
            }
        }
        let n = T::from_usize(x.rows.max(1)).unwrap();
        let v = Matrix::scalar(total / n);
        self.push("cross_entropy_with_softmax", v, Op::CrossEntropy(logits, target.clone()), &[logits])
    }

    /// `[a | b]`, joining columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.0 != sb.0 {
            return Err(AutodiffError::Shape { op: "concat_cols", left: sa, right: sb });
        }
        let (x, y) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(sa.0 * (sa.1 + sb.1));
        for r in 0..sa.0 {
            data.extend_from_slice(x.row(r));
            data.extend_from_slice(y.row(r));
        }
        let v = Matrix::from_vec(sa.0, sa.1 + sb.1, data);
        self.push("concat_cols", v, Op::ConcatCols(a, b), &[a, b])
    }

    /// Gathers rows `idx` of `a` (repeats allowed).
    pub fn index_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = self.value(a);
        check_index("index_rows", idx, x.rows)?;
        let mut data = Vec::with_capacity(idx.len() * x.cols);
        for &i in idx {
            data.extend_from_slice(x.row(i));
        }
        let v = Matrix::from_vec(idx.len(), x.cols, data);
        self.push("index_rows", v, Op::IndexRows(a, idx.to_vec()), &[a])
    }

    /// Sums row k of `a` into output row `segments[k]`; output has `n` rows.
    pub fn segment_sum(&mut self, a: Var, segments: &[usize], n: usize) -> Result<Var> {
        let x = self.value(a);
        if x.rows != segments.len() {
            return Err(AutodiffError::Shape {
                op: "segment_sum",
                left: x.shape(),
                right: (segments.len(), x.cols),
            });
        }
        check_index("segment_sum", segments, n)?;
        let mut v = Matrix::zeros(n, x.cols);
        for (k, &g) in segments.iter().enumerate() {
            let src = x.row(k).to_vec();
            for (o, y) in v.row_mut(g).iter_mut().zip(src) {
                *o += y;
            }
        }
        self.push("segment_sum", v, Op::SegmentSum(a, segments.to_vec()), &[a])
    }

    /// Multiplies row k of `a` by `w[k]`, where `w` is an r×1 column.
    pub fn scale_rows(&mut self, w: Var, a: Var) -> Result<Var> {
        let (sw, sa) = (self.shape(w), self.shape(a));
        if sw != (sa.0, 1) {
            return Err(AutodiffError::Shape { op: "scale_rows", left: sw, right: sa });
        }
        let wv = self.value(w).data.clone();
        let mut v = self.value(a).clone();
        for (r, &s) in wv.iter().enumerate() {
            for x in v.row_mut(r) {
                *x *= s;
            }
        }
        self.push("scale_rows", v, Op::ScaleRows(w, a), &[w, a])
    }

    /// Per-row dot products, as an r×1 column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        same("row_dot", self.shape(a), self.shape(b))?;
        let (x, y) = (self.value(a), self.value(b));
        let v = Matrix::from_vec(
            x.rows,
            1,
            (0..x.rows).map(|r| x.row(r).iter().zip(y.row(r)).map(|(&p, &q)| p * q).sum()).collect(),
        );
        self.push("row_dot", v, Op::RowDot(a, b), &[a, b])
    }

    /// `sign(x) * |x|^p` element-wise with a learnable 1×1 exponent. Exponents
    /// below 1e-3 are clamped (recorded in `diagnostics`).
    pub fn signed_pow(&mut self, a: Var, p: Var) -> Result<Var> {
        let sp = self.shape(p);
        if sp != (1, 1) {
            return Err(AutodiffError::Shape { op: "signed_pow", left: self.shape(a), right: sp });
        }
        let raw = self.value(p).item();
        let min = T::of(SIGNED_POW_MIN);
        let clamped = !(raw >= min);
        let pe = if clamped { min } else { raw };
        if clamped {
            self.diagnostics.push(format!("power exponent {raw} clamped to {SIGNED_POW_MIN}"));
        }
        let v = self.value(a).map(|x| signed_pow(x, pe));
        self.push("signed_pow", v, Op::SignedPow(a, p, pe, clamped), &[a, p])
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(T::recip);
        self.push("recip", v, Op::Recip(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose();
        self.push("transpose", v, Op::Transpose(a), &[a])
    }

    /// Propagates d(loss)/d(value) to every recorded value that needs it.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let s = self.shape(loss);
        if s != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(s));
        }
        let mut grads: Vec<Option<Matrix<T>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(Matrix::scalar(T::one()));
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.needs_grad {
                *g = None;
            }
        }
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(AutodiffError::NumericFault("backward"));
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Matrix<T>>], v: Var, delta: Matrix<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot => *slot = Some(delta),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, op: &Op<T>, y: &Matrix<T>, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    self.acc(grads, *a, g.matmul_t(false, val(*b), true));
                }
                if self.wants(*b) {
                    self.acc(grads, *b, val(*a).matmul_t(true, g, false));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::AddRow(a, b) => {
                self.acc(grads, *a, g.clone());
                if self.wants(*b) {
                    let mut s = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, &x) in s.data.iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    self.acc(grads, *b, s);
                }
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                self.acc(grads, *a, g.zip_map(val(*b), |x, y| x * y));
                self.acc(grads, *b, g.zip_map(val(*a), |x, y| x * y));
            }
            Op::Scale(a, s) => self.acc(grads, *a, g.map(|x| x * *s)),
            Op::Tanh(a) => self.acc(grads, *a, g.zip_map(y, |gi, yi| gi * (T::one() - yi * yi))),
            Op::Softmax(a, axis) => {
                let mut d = Matrix::zeros(y.rows, y.cols);
                match axis {
                    Axis::Rows => {
                        for r in 0..y.rows {
                            let dot: T = g.row(r).iter().zip(y.row(r)).map(|(&p, &q)| p * q).sum();
                            for c in 0..y.cols {
                                *d.at_mut(r, c) = y.at(r, c) * (g.at(r, c) - dot);
                            }
                        }
                    }
                    Axis::Cols => {
                        for c in 0..y.cols {
                            let dot: T = (0..y.rows).map(|r| g.at(r, c) * y.at(r, c)).sum();
                            for r in 0..y.rows {
                                *d.at_mut(r, c) = y.at(r, c) * (g.at(r, c) - dot);
                            }
                        }
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::SegmentSoftmax(a, seg) => {
                let nseg = seg.iter().max().map_or(0, |m| m + 1);
                let mut dot = vec![T::zero(); nseg];
                for (k, &s) in seg.iter().enumerate() {
                    dot[s] += g.data[k] * y.data[k];
                }
                let d = (0..seg.len()).map(|k| y.data[k] * (g.data[k] - dot[seg[k]])).collect();
                self.acc(grads, *a, Matrix::from_vec(y.rows, 1, d));
            }
            Op::RowSum(a) => {
                let x = val(*a);
                let mut d = Matrix::zeros(x.rows, x.cols);
                for r in 0..x.rows {
                    d.row_mut(r).iter_mut().for_each(|o| *o = g.data[r]);
                }
                self.acc(grads, *a, d);
            }
            Op::ColumnSum(a) | Op::MeanRows(a) => {
                let x = val(*a);
                let k = if matches!(op, Op::MeanRows(_)) {
                    T::one() / T::from_usize(x.rows).unwrap()
                } else {
                    T::one()
                };
                let mut d = Matrix::zeros(x.rows, x.cols);
                for r in 0..x.rows {
                    for (o, &gi) in d.row_mut(r).iter_mut().zip(&g.data) {
                        *o = gi * k;
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::SumAll(a) => {
                let x = val(*a);
                self.acc(grads, *a, Matrix::filled(x.rows, x.cols, g.item()));
            }
            Op::MaxRows(a, arg) => {
                let x = val(*a);
                let mut d = Matrix::zeros(x.rows, x.cols);
                for (c, &r) in arg.iter().enumerate() {
                    *d.at_mut(r, c) = g.data[c];
                }
                self.acc(grads, *a, d);
            }
            Op::SquaredL2Diff(a, b) => {
                let two = T::of(2.0) * g.item();
                let diff = val(*a).zip_map(val(*b), |p, q| two * (p - q));
                self.acc(grads, *b, diff.map(|x| -x));
                self.acc(grads, *a, diff);
            }
            Op::CrossEntropy(a, target) => {
                let x = val(*a);
                let n = T::from_usize(x.rows.max(1)).unwrap();
                let mut d = x.clone();
                for r in 0..x.rows {
                    softmax_slice(d.row_mut(r));
                    let ts: T = target.row(r).iter().copied().sum();
                    for (o, &t) in d.row_mut(r).iter_mut().zip(target.row(r)) {
                        *o = (*o * ts - t) * g.item() / n;
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::ConcatCols(a, b) => {
                let ca = val(*a).cols;
                let cb = val(*b).cols;
                let mut da = Matrix::zeros(g.rows, ca);
                let mut db = Matrix::zeros(g.rows, cb);
                for r in 0..g.rows {
                    da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                }
                self.acc(grads, *a, da);
                self.acc(grads, *b, db);
            }
            Op::IndexRows(a, idx) => {
                let x = val(*a);
                let mut d = Matrix::zeros(x.rows, x.cols);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, &gi) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += gi;
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::SegmentSum(a, seg) => {
                let x = val(*a);
                let mut d = Matrix::zeros(x.rows, x.cols);
                for (k, &s) in seg.iter().enumerate() {
                    d.row_mut(k).copy_from_slice(g.row(s));
                }
                self.acc(grads, *a, d);
            }
            Op::ScaleRows(w, a) => {
                let (wv, x) = (val(*w), val(*a));
                if self.wants(*w) {
                    let d = (0..x.rows)
                        .map(|r| g.row(r).iter().zip(x.row(r)).map(|(&p, &q)| p * q).sum())
                        .collect();
                    self.acc(grads, *w, Matrix::from_vec(x.rows, 1, d));
                }
                if self.wants(*a) {
                    let mut d = g.clone();
                    for r in 0..d.rows {
                        let s = wv.data[r];
                        d.row_mut(r).iter_mut().for_each(|o| *o *= s);
                    }
                    self.acc(grads, *a, d);
                }
            }
            Op::RowDot(a, b) => {
                let (x, z) = (val(*a), val(*b));
                let mut da = z.clone();
                let mut db = x.clone();
                for r in 0..x.rows {
                    let s = g.data[r];
                    da.row_mut(r).iter_mut().for_each(|o| *o *= s);
                    db.row_mut(r).iter_mut().for_each(|o| *o *= s);
                }
                self.acc(grads, *a, da);
                self.acc(grads, *b, db);
            }
            Op::SignedPow(a, p, pe, clamped) => {
                let x = val(*a);
                if self.wants(*a) {
                    let d = x.zip_map(g, |xi, gi| {
                        if xi == T::zero() {
                            T::zero()
                        } else {
                            gi * *pe * xi.abs().powf(*pe - T::one())
                        }
                    });
                    self.acc(grads, *a, d);
                }
                if self.wants(*p) && !clamped {
                    let s: T = x
                        .data
                        .iter()
                        .zip(&y.data)
                        .zip(&g.data)
                        .filter(|((&xi, _), _)| xi != T::zero())
                        .map(|((&xi, &yi), &gi)| gi * yi * xi.abs().ln())
                        .sum();
                    self.acc(grads, *p, Matrix::scalar(s));
                }
            }
            Op::Recip(a) => self.acc(grads, *a, g.zip_map(y, |gi, yi| -gi * yi * yi)),
            Op::Transpose(a) => self.acc(grads, *a, g.transpose()),
        }
    }
}

/// Mixed relative error used by [`gradcheck`]: `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central finite-difference check of `f` at `inputs`. Returns the largest
/// [`relative_error`] over every input coordinate.
pub fn gradcheck<F>(inputs: &[Matrix<f64>], h: f64, floor: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Matrix<f64>]| -> Result<f64> {
        let mut t = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|m| t.leaf(m.clone())).collect();
        let out = f(&mut t, &vars)?;
        let s = t.shape(out);
        if s != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(s));
        }
        Ok(t.value(out).item())
    };
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| t.leaf(m.clone())).collect();
    let out = f(&mut t, &vars)?;
    let grads = t.backward(out)?;
    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (vi, v) in vars.iter().enumerate() {
        let zeros = Matrix::zeros(inputs[vi].rows, inputs[vi].cols);
        let analytic = grads.get(*v).unwrap_or(&zeros).clone();
        for k in 0..inputs[vi].len() {
            let x0 = inputs[vi].data[k];
            probe[vi].data[k] = x0 + h;
            let up = eval(&probe)?;
            probe[vi].data[k] = x0 - h;
            let down = eval(&probe)?;
            probe[vi].data[k] = x0;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(analytic.data[k], numeric, floor));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const H: f64 = 1e-5;
    const FLOOR: f64 = 1e-3;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix<f64> {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Reduces any output to a scalar with fixed random weights so every
    /// output coordinate contributes to the check.
    fn weighted(t: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var> {
        let (r, c) = t.shape(v);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = t.constant(rand_mat(&mut rng, r, c));
        let p = t.mul(v, w)?;
        t.sum(p)
    }

    #[test]
    fn softmax_uniform() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Matrix::row_vector(vec![0.0, 0.0, 0.0]));
        let y = t.softmax(x, Axis::Rows).unwrap();
        for &v in &t.value(y).data {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn l2_of_self_is_zero_with_zero_grad() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Matrix::row_vector(vec![1.0, -2.0]));
        let l = t.squared_l2_diff(x, x).unwrap();
        assert_eq!(t.value(l).item(), 0.0);
        let g = t.backward(l).unwrap();
        assert!(g.get(x).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn square_derivative() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Matrix::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        assert_eq!(t.backward(y).unwrap().get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn detached_gets_no_grad() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Matrix::scalar(2.0));
        let c = t.constant(Matrix::scalar(5.0));
        let y = t.mul(x, c).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 5.0);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut t = Tape::<f64>::new();
        let a = t.leaf(Matrix::zeros(3, 4));
        let b = t.leaf(Matrix::zeros(3, 2));
        let e = t.matmul(a, b).unwrap_err();
        assert_eq!(e.to_string(), "matmul: shape mismatch between (3, 4) and (3, 2)");
        assert!(matches!(t.backward(a), Err(AutodiffError::NonScalarLoss((3, 4)))));
    }

    #[test]
    fn numeric_fault_on_overflow() {
        let mut t = Tape::<f64>::new();
        let a = t.leaf(Matrix::scalar(0.0));
        assert_eq!(t.recip(a).unwrap_err(), AutodiffError::NumericFault("recip"));
    }

    #[test]
    fn matmul_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = rand_mat(&mut rng, 3, 4);
        let b = rand_mat(&mut rng, 4, 2);
        let err = gradcheck(&[a, b], H, FLOOR, |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted(t, y, 1)
        })
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn two_tanh_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_mat(&mut rng, 2, 3);
        let w1 = rand_mat(&mut rng, 3, 3);
        let w2 = rand_mat(&mut rng, 3, 2);
        let err = gradcheck(&[x, w1, w2], H, FLOOR, |t, v| {
            let h = t.matmul(v[0], v[1])?;
            let h = t.tanh(h)?;
            let o = t.matmul(h, v[2])?;
            let o = t.tanh(o)?;
            t.sum(o)
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn clamped_power_exponent() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Matrix::row_vector(vec![0.5, -2.0]));
        let p = t.leaf(Matrix::scalar(-1.0));
        let y = t.signed_pow(x, p).unwrap();
        assert_eq!(t.diagnostics.len(), 1);
        assert!(t.value(y).data[1] < 0.0);
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert!(g.get(p).is_none());
    }

    #[test]
    fn cross_entropy_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let mut t = Tape::<f64>::new();
            let z = t.leaf(rand_mat(&mut rng, 1, 2).map(|v| v * 20.0));
            let l = t.cross_entropy_with_softmax(z, &Matrix::row_vector(vec![0.0, 1.0])).unwrap();
            assert!(t.value(l).item() >= 0.0);
        }
    }
}
