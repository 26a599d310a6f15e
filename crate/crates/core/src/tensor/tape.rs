//! Reverse-mode differentiation over a linear operation tape.
//!
//! Operations append their output to the tape and, when at least one input
//! requires a gradient, a record describing how to pull the output gradient
//! back onto the inputs. [`Tape::backward`] replays those records in exact
//! reverse order.

use std::sync::Arc;

use super::sparse::CsrMatrix;
use super::{gemm, Tensor};
use crate::error::{contract, dim, Error, Result};
use crate::rng::Rng;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// How [`Tape::segment_normalize`] rescales the free entries of each row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentNorm {
    /// Values pass through unchanged.
    #[default]
    None,
    /// Divide by the row mean, so free entries average to 1.
    Mean,
    /// Divide by the row sum, so free entries sum to 1.
    Sum,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
}

#[derive(Debug)]
enum Op {
    MatMul(Var, Var),
    Spmm(Arc<CsrMatrix>, Var),
    SpmmWeighted(Arc<CsrMatrix>, Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Recip(Var),
    ClampMin(Var, f64),
    Softmax(Var),
    ConcatCols(Var, Var),
    GatherRows(Var, Arc<Vec<usize>>),
    Pick(Var, Arc<Vec<(usize, usize)>>),
    Dropout(Var, Vec<f64>),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    SegmentNormalize {
        r: Var,
        indptr: Arc<Vec<usize>>,
        fixed: Arc<Vec<bool>>,
        norm: SegmentNorm,
    },
}

#[derive(Debug)]
struct Record {
    op: Op,
    out: Var,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    records: Vec<Record>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.records.clear();
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn check_finite(&self, op: &'static str, inputs: &[Var]) -> Result<()> {
        for &v in inputs {
            if !self.nodes[v.0].value.is_finite() {
                return Err(Error::Numeric { op });
            }
        }
        Ok(())
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let out = self.leaf(value, requires_grad);
        if requires_grad {
            self.records.push(Record { op, out });
        }
        out
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(dim(op, format!("{}x{} vs {}x{}", sa.0, sa.1, sb.0, sb.1)));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_finite("matmul", &[a, b])?;
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// Constant sparse matrix times a dense tensor.
    pub fn spmm(&mut self, m: &Arc<CsrMatrix>, x: Var) -> Result<Var> {
        self.check_finite("spmm", &[x])?;
        let value = m.spmm(self.value(x))?;
        Ok(self.push(value, Op::Spmm(m.clone(), x), &[x]))
    }

    /// Sparse matrix with the sparsity of `pattern` and per-entry weights
    /// `w` (an `nnz x 1` tensor) times `x`. Gradients flow into both `w`
    /// and `x`; the stored values of `pattern` are ignored.
    pub fn spmm_weighted(&mut self, pattern: &Arc<CsrMatrix>, w: Var, x: Var) -> Result<Var> {
        self.check_finite("spmm_weighted", &[w, x])?;
        if self.shape(w) != (pattern.nnz(), 1) {
            return Err(dim(
                "spmm_weighted",
                format!("weights {:?} for {} entries", self.shape(w), pattern.nnz()),
            ));
        }
        let value = pattern.spmm_with(self.value(w).data(), self.value(x))?;
        Ok(self.push(value, Op::SpmmWeighted(pattern.clone(), w, x), &[w, x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_finite("add", &[a, b])?;
        self.same_shape("add", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Tensor::from_vec(x.rows(), x.cols(), data)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_finite("sub", &[a, b])?;
        self.same_shape("sub", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let value = Tensor::from_vec(x.rows(), x.cols(), data)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_finite("mul", &[a, b])?;
        self.same_shape("mul", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::from_vec(x.rows(), x.cols(), data)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.check_finite("scale", &[x])?;
        let value = self.value(x).map(|v| v * s);
        Ok(self.push(value, Op::Scale(x, s), &[x]))
    }

    /// Adds the `1 x cols` row `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        self.check_finite("add_row", &[x, b])?;
        let (xs, bs) = (self.shape(x), self.shape(b));
        if bs != (1, xs.1) {
            return Err(dim("add_row", format!("bias {}x{} for {}x{}", bs.0, bs.1, xs.0, xs.1)));
        }
        let mut value = self.value(x).clone();
        let brow = self.value(b).data().to_vec();
        for i in 0..xs.0 {
            for (v, bv) in value.row_mut(i).iter_mut().zip(&brow) {
                *v += bv;
            }
        }
        Ok(self.push(value, Op::AddRow(x, b), &[x, b]))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check_finite("relu", &[x])?;
        let value = self.value(x).map(|v| v.max(0.0));
        Ok(self.push(value, Op::Relu(x), &[x]))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.check_finite("exp", &[x])?;
        let value = self.value(x).map(f64::exp);
        if !value.is_finite() {
            return Err(Error::Numeric { op: "exp" });
        }
        Ok(self.push(value, Op::Exp(x), &[x]))
    }

    /// Natural logarithm. Inputs must be strictly positive.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.check_finite("log", &[x])?;
        if self.value(x).data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Numeric { op: "log" });
        }
        let value = self.value(x).map(f64::ln);
        Ok(self.push(value, Op::Log(x), &[x]))
    }

    pub fn reciprocal(&mut self, x: Var) -> Result<Var> {
        self.check_finite("reciprocal", &[x])?;
        if self.value(x).data().contains(&0.0) {
            return Err(Error::Numeric { op: "reciprocal" });
        }
        let value = self.value(x).map(|v| 1.0 / v);
        Ok(self.push(value, Op::Recip(x), &[x]))
    }

    /// `max(x, lo)` elementwise; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, x: Var, lo: f64) -> Result<Var> {
        self.check_finite("clamp_min", &[x])?;
        let value = self.value(x).map(|v| v.max(lo));
        Ok(self.push(value, Op::ClampMin(x, lo), &[x]))
    }

    pub fn row_softmax(&mut self, x: Var) -> Result<Var> {
        self.check_finite("row_softmax", &[x])?;
        let mut value = self.value(x).clone();
        for i in 0..value.rows() {
            softmax_in_place(value.row_mut(i));
        }
        Ok(self.push(value, Op::Softmax(x), &[x]))
    }

    /// Side-by-side concatenation `[a | b]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_finite("concat_cols", &[a, b])?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.0 != sb.0 {
            return Err(dim("concat_cols", format!("{} rows vs {} rows", sa.0, sb.0)));
        }
        let mut value = Tensor::zeros(sa.0, sa.1 + sb.1);
        for i in 0..sa.0 {
            let row = value.row_mut(i);
            row[..sa.1].copy_from_slice(self.nodes[a.0].value.row(i));
            row[sa.1..].copy_from_slice(self.nodes[b.0].value.row(i));
        }
        Ok(self.push(value, Op::ConcatCols(a, b), &[a, b]))
    }

    /// Rows of `x` at `idx`, in that order (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: &Arc<Vec<usize>>) -> Result<Var> {
        self.check_finite("gather_rows", &[x])?;
        let src = self.value(x);
        let mut value = Tensor::zeros(idx.len(), src.cols());
        for (o, &i) in idx.iter().enumerate() {
            if i >= src.rows() {
                return Err(dim("gather_rows", format!("row {i} of {}", src.rows())));
            }
            value.row_mut(o).copy_from_slice(src.row(i));
        }
        Ok(self.push(value, Op::GatherRows(x, idx.clone()), &[x]))
    }

    /// Entries `x[r, c]` for each `(r, c)`, as a `k x 1` column.
    pub fn pick(&mut self, x: Var, at: &Arc<Vec<(usize, usize)>>) -> Result<Var> {
        self.check_finite("pick", &[x])?;
        let src = self.value(x);
        let mut data = Vec::with_capacity(at.len());
        for &(r, c) in at.iter() {
            if r >= src.rows() || c >= src.cols() {
                return Err(dim("pick", format!("({r},{c}) outside {}x{}", src.rows(), src.cols())));
            }
            data.push(src.get(r, c));
        }
        let value = Tensor::column(data);
        Ok(self.push(value, Op::Pick(x, at.clone()), &[x]))
    }

    /// Inverted dropout: kept entries are scaled by `1/(1-p)`. Identity when
    /// `train` is false or `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Rng, train: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(contract(format!("dropout probability {p} outside [0, 1)")));
        }
        self.check_finite("dropout", &[x])?;
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n).map(|_| if rng.bernoulli(p) { 0.0 } else { keep }).collect();
        let src = self.value(x);
        let data = src.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::from_vec(src.rows(), src.cols(), data)?;
        Ok(self.push(value, Op::Dropout(x, mask), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check_finite("sum", &[x])?;
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        Ok(self.push(value, Op::Sum(x), &[x]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check_finite("mean", &[x])?;
        let t = self.value(x);
        if t.is_empty() {
            return Err(contract("mean of an empty tensor"));
        }
        let value = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        Ok(self.push(value, Op::Mean(x), &[x]))
    }

    /// Per-row sums as an `rows x 1` column.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        self.check_finite("row_sum", &[x])?;
        let t = self.value(x);
        let value = Tensor::column((0..t.rows()).map(|i| t.row(i).iter().sum()).collect());
        Ok(self.push(value, Op::RowSum(x), &[x]))
    }

    /// Rescales an `nnz x 1` column of per-entry values row by row.
    ///
    /// `indptr` groups entries into rows. Entries flagged in `fixed` are
    /// output as exactly `1.0` and take no part in the row statistics; the
    /// remaining (free) entries are divided according to `norm`.
    pub fn segment_normalize(
        &mut self,
        r: Var,
        indptr: &Arc<Vec<usize>>,
        fixed: &Arc<Vec<bool>>,
        norm: SegmentNorm,
    ) -> Result<Var> {
        self.check_finite("segment_normalize", &[r])?;
        let nnz = *indptr.last().unwrap_or(&0);
        if self.shape(r) != (nnz, 1) || fixed.len() != nnz {
            return Err(dim(
                "segment_normalize",
                format!("values {:?}, {} flags, {} entries", self.shape(r), fixed.len(), nnz),
            ));
        }
        let rv = self.value(r).data();
        let mut out = vec![0.0; nnz];
        for g in 0..indptr.len() - 1 {
            let range = indptr[g]..indptr[g + 1];
            let factor = segment_factor(rv, fixed, range.clone(), norm)?;
            for e in range {
                out[e] = if fixed[e] { 1.0 } else { rv[e] * factor };
            }
        }
        let value = Tensor::column(out);
        Ok(self.push(
            value,
            Op::SegmentNormalize {
                r,
                indptr: indptr.clone(),
                fixed: fixed.clone(),
                norm,
            },
            &[r],
        ))
    }

    /// Back-propagates from the scalar `loss` and clears the tape.
    ///
    /// Every tensor that requires a gradient receives one, all-zero when the
    /// loss does not depend on it.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(contract("backward on an empty tape"));
        }
        if self.shape(loss) != (1, 1) {
            return Err(contract(format!("backward needs a 1x1 loss, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        let records = std::mem::take(&mut self.records);
        for rec in records.iter().rev() {
            let Some(g) = grads[rec.out.0].take() else {
                continue;
            };
            if !g.is_finite() {
                return Err(Error::Numeric { op: "backward" });
            }
            self.pull(&rec.op, &rec.out, &g, &mut grads)?;
            grads[rec.out.0] = Some(g);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad {
                let g = grads[i].get_or_insert_with(|| Tensor::zeros(node.value.rows(), node.value.cols()));
                if !g.is_finite() {
                    return Err(Error::Numeric { op: "backward" });
                }
            } else {
                grads[i] = None;
            }
        }
        self.clear();
        Ok(Gradients { grads })
    }

    fn pull(&self, op: &Op, out: &Var, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: &Var| &self.nodes[v.0].value;
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        match op {
            Op::MatMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if needs(a) {
                    let ga = slot(grads, *a, m, k);
                    gemm(false, true, m, n, k, 1.0, g.data(), bv.data(), 1.0, ga.data_mut());
                }
                if needs(b) {
                    let gb = slot(grads, *b, k, n);
                    gemm(true, false, k, m, n, 1.0, av.data(), g.data(), 1.0, gb.data_mut());
                }
            }
            Op::Spmm(m, x) => {
                let (r, c) = val(x).shape();
                let gx = slot(grads, *x, r, c);
                m.spmm_transpose_acc(m.values(), g.data(), c, gx.data_mut());
            }
            Op::SpmmWeighted(p, w, x) => {
                let xv = val(x);
                let d = xv.cols();
                if needs(w) {
                    let gw = slot(grads, *w, p.nnz(), 1);
                    let gwd = gw.data_mut();
                    for row in 0..p.rows() {
                        let grow = g.row(row);
                        for e in p.row_range(row) {
                            let xrow = xv.row(p.indices()[e]);
                            gwd[e] += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
                if needs(x) {
                    let wv = val(w).data().to_vec();
                    let gx = slot(grads, *x, xv.rows(), d);
                    p.spmm_transpose_acc(&wv, g.data(), d, gx.data_mut());
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if needs(v) {
                        axpy(slot(grads, *v, g.rows(), g.cols()), 1.0, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(a) {
                    axpy(slot(grads, *a, g.rows(), g.cols()), 1.0, g);
                }
                if needs(b) {
                    axpy(slot(grads, *b, g.rows(), g.cols()), -1.0, g);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(a).clone(), val(b).clone());
                if needs(a) {
                    zip_acc(slot(grads, *a, g.rows(), g.cols()), g, &bv, |gv, o| gv * o);
                }
                if needs(b) {
                    zip_acc(slot(grads, *b, g.rows(), g.cols()), g, &av, |gv, o| gv * o);
                }
            }
            Op::Scale(x, s) => axpy(slot(grads, *x, g.rows(), g.cols()), *s, g),
            Op::AddRow(x, b) => {
                if needs(x) {
                    axpy(slot(grads, *x, g.rows(), g.cols()), 1.0, g);
                }
                if needs(b) {
                    let gb = slot(grads, *b, 1, g.cols());
                    for i in 0..g.rows() {
                        for (acc, v) in gb.data_mut().iter_mut().zip(g.row(i)) {
                            *acc += v;
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let xv = val(x).clone();
                zip_acc(slot(grads, *x, g.rows(), g.cols()), g, &xv, |gv, xi| if xi > 0.0 { gv } else { 0.0 });
            }
            Op::Exp(x) => {
                let y = val(out).clone();
                zip_acc(slot(grads, *x, g.rows(), g.cols()), g, &y, |gv, yi| gv * yi);
            }
            Op::Log(x) => {
                let xv = val(x).clone();
                zip_acc(slot(grads, *x, g.rows(), g.cols()), g, &xv, |gv, xi| gv / xi);
            }
            Op::Recip(x) => {
                let y = val(out).clone();
                zip_acc(slot(grads, *x, g.rows(), g.cols()), g, &y, |gv, yi| -gv * yi * yi);
            }
            Op::ClampMin(x, lo) => {
                let xv = val(x).clone();
                let lo = *lo;
                zip_acc(slot(grads, *x, g.rows(), g.cols()), g, &xv, |gv, xi| if xi > lo { gv } else { 0.0 });
            }
            Op::Softmax(x) => {
                let y = val(out).clone();
                let gx = slot(grads, *x, g.rows(), g.cols());
                for i in 0..g.rows() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((acc, &yv), &gv) in gx.row_mut(i).iter_mut().zip(yr).zip(gr) {
                        *acc += yv * (gv - dot);
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = val(a).cols();
                if needs(a) {
                    let ga = slot(grads, *a, g.rows(), ca);
                    for i in 0..g.rows() {
                        for (acc, v) in ga.row_mut(i).iter_mut().zip(&g.row(i)[..ca]) {
                            *acc += v;
                        }
                    }
                }
                if needs(b) {
                    let cb = g.cols() - ca;
                    let gb = slot(grads, *b, g.rows(), cb);
                    for i in 0..g.rows() {
                        for (acc, v) in gb.row_mut(i).iter_mut().zip(&g.row(i)[ca..]) {
                            *acc += v;
                        }
                    }
                }
            }
            Op::GatherRows(x, idx) => {
                let (r, c) = val(x).shape();
                let gx = slot(grads, *x, r, c);
                for (o, &i) in idx.iter().enumerate() {
                    for (acc, v) in gx.row_mut(i).iter_mut().zip(g.row(o)) {
                        *acc += v;
                    }
                }
            }
            Op::Pick(x, at) => {
                let (r, c) = val(x).shape();
                let gx = slot(grads, *x, r, c);
                for (k, &(i, j)) in at.iter().enumerate() {
                    let cur = gx.get(i, j);
                    gx.set(i, j, cur + g.data()[k]);
                }
            }
            Op::Dropout(x, mask) => {
                let gx = slot(grads, *x, g.rows(), g.cols());
                for ((acc, gv), m) in gx.data_mut().iter_mut().zip(g.data()).zip(mask) {
                    *acc += gv * m;
                }
            }
            Op::Sum(x) => {
                let (r, c) = val(x).shape();
                let gv = g.item();
                slot(grads, *x, r, c).data_mut().iter_mut().for_each(|a| *a += gv);
            }
            Op::Mean(x) => {
                let (r, c) = val(x).shape();
                let gv = g.item() / (r * c) as f64;
                slot(grads, *x, r, c).data_mut().iter_mut().for_each(|a| *a += gv);
            }
            Op::RowSum(x) => {
                let (r, c) = val(x).shape();
                let gx = slot(grads, *x, r, c);
                for i in 0..r {
                    let gi = g.data()[i];
                    gx.row_mut(i).iter_mut().for_each(|a| *a += gi);
                }
            }
            Op::SegmentNormalize { r, indptr, fixed, norm } => {
                let rv = val(r).data().to_vec();
                let gr = slot(grads, *r, rv.len(), 1);
                let gd = gr.data_mut();
                let gin = g.data();
                for s in 0..indptr.len() - 1 {
                    let range = indptr[s]..indptr[s + 1];
                    let factor = segment_factor(&rv, fixed, range.clone(), *norm)?;
                    match norm {
                        SegmentNorm::None => {
                            for e in range.filter(|&e| !fixed[e]) {
                                gd[e] += gin[e];
                            }
                        }
                        SegmentNorm::Mean | SegmentNorm::Sum => {
                            let free = || range.clone().filter(|&e| !fixed[e]);
                            let total: f64 = free().map(|e| rv[e]).sum();
                            let weighted: f64 = free().map(|e| gin[e] * rv[e]).sum();
                            for e in free() {
                                gd[e] += factor * (gin[e] - weighted / total);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn segment_factor(rv: &[f64], fixed: &[bool], range: std::ops::Range<usize>, norm: SegmentNorm) -> Result<f64> {
    if norm == SegmentNorm::None {
        return Ok(1.0);
    }
    let (mut total, mut count) = (0.0, 0usize);
    for e in range {
        if !fixed[e] {
            total += rv[e];
            count += 1;
        }
    }
    if count == 0 {
        return Ok(1.0);
    }
    if total <= 0.0 {
        return Err(Error::Numeric { op: "segment_normalize" });
    }
    Ok(match norm {
        SegmentNorm::Mean => count as f64 / total,
        _ => 1.0 / total,
    })
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn slot(grads: &mut [Option<Tensor>], v: Var, rows: usize, cols: usize) -> &mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(rows, cols))
}

fn axpy(acc: &mut Tensor, alpha: f64, g: &Tensor) {
    for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += alpha * v;
    }
}

fn zip_acc(acc: &mut Tensor, g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) {
    for ((a, &gv), &o) in acc.data_mut().iter_mut().zip(g.data()).zip(other.data()) {
        *a += f(gv, o);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(t(1, 2, &[0.0, 0.0]));
        let y = tape.row_softmax(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn relu_clips_negatives() {
        let mut tape = Tape::new();
        let x = tape.constant(t(1, 2, &[-1.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn quadratic_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(t(1, 2, &[1.0, 2.0]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
        assert!(tape.is_empty());
    }

    #[test]
    fn relu_subgradient() {
        let mut tape = Tape::new();
        let x = tape.param(t(1, 2, &[-1.0, 2.0]));
        let r = tape.relu(x).unwrap();
        let loss = tape.sum(r).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn unused_param_gets_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.param(t(1, 1, &[3.0]));
        let unused = tape.param(t(2, 2, &[1.0; 4]));
        let loss = tape.sum(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(unused).unwrap(), &Tensor::zeros(2, 2));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(t(1, 2, &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn empty_tape_rejected() {
        let mut tape = Tape::new();
        assert!(tape.backward(Var(0)).is_err());
    }

    #[test]
    fn non_finite_input_names_op() {
        let mut tape = Tape::new();
        let x = tape.constant(t(1, 1, &[f64::NAN]));
        let err = tape.relu(x).unwrap_err();
        assert!(matches!(err, Error::Numeric { op: "relu" }));
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 2));
        let b = tape.constant(Tensor::zeros(2, 3));
        let err = tape.add(a, b).unwrap_err();
        assert!(err.to_string().starts_with("add:"));
    }

    #[test]
    fn constants_are_not_recorded() {
        let mut tape = Tape::new();
        let a = tape.constant(t(1, 1, &[1.0]));
        let b = tape.exp(a).unwrap();
        assert!(!tape.requires_grad(b));
        assert!(tape.records.is_empty());
    }

    #[test]
    fn dropout_is_identity_at_eval() {
        let mut tape = Tape::new();
        let mut rng = Rng::new(1);
        let x = tape.param(t(1, 3, &[1.0, 2.0, 3.0]));
        let y = tape.dropout(x, 0.5, &mut rng, false).unwrap();
        assert_eq!(x, y);
        assert!(tape.dropout(x, 1.0, &mut rng, true).is_err());
    }

    #[test]
    fn segment_normalize_mean_and_fixed() {
        let mut tape = Tape::new();
        let r = tape.constant(Tensor::column(vec![1.0, 3.0, 7.0, 2.0]));
        let indptr = Arc::new(vec![0, 3, 4]);
        let fixed = Arc::new(vec![false, false, true, false]);
        let y = tape.segment_normalize(r, &indptr, &fixed, SegmentNorm::Mean).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 1.5, 1.0, 1.0]);
        let y = tape.segment_normalize(r, &indptr, &fixed, SegmentNorm::Sum).unwrap();
        assert_eq!(tape.value(y).data(), &[0.25, 0.75, 1.0, 1.0]);
    }
}
