use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{contract, dim, Result};

/// Compressed sparse row matrix with `f64` values.
///
/// Column indices inside each row are strictly increasing, so there are no
/// duplicate entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let m = Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    /// Build from `(row, col, value)` triplets. Duplicate coordinates are an
    /// error.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        for (k, &(r, c, v)) in triplets.iter().enumerate() {
            if r >= rows || c >= cols {
                return Err(contract(format!("entry ({r},{c}) outside {rows}x{cols}")));
            }
            if k > 0 && triplets[k - 1].0 == r && triplets[k - 1].1 == c {
                return Err(contract(format!("duplicate entry ({r},{c})")));
            }
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    /// Sparse view of the nonzero entries of a dense tensor.
    pub fn from_dense(t: &Tensor) -> Self {
        let mut indptr = Vec::with_capacity(t.rows() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..t.rows() {
            for (j, &v) in t.row(i).iter().enumerate() {
                if v != 0.0 {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            rows: t.rows(),
            cols: t.cols(),
            indptr,
            indices,
            values,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.indptr.len() != self.rows + 1 || self.indptr[0] != 0 {
            return Err(contract("csr: indptr must have rows+1 entries starting at 0"));
        }
        if *self.indptr.last().unwrap() != self.indices.len() || self.indices.len() != self.values.len() {
            return Err(contract("csr: indptr, indices and values disagree on nnz"));
        }
        for r in 0..self.rows {
            if self.indptr[r] > self.indptr[r + 1] {
                return Err(contract(format!("csr: indptr decreases at row {r}")));
            }
            let cols = &self.indices[self.indptr[r]..self.indptr[r + 1]];
            for (k, &c) in cols.iter().enumerate() {
                if c >= self.cols {
                    return Err(contract(format!("csr: column {c} out of range in row {r}")));
                }
                if k > 0 && cols[k - 1] >= c {
                    return Err(contract(format!("csr: row {r} columns not strictly increasing")));
                }
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Same sparsity pattern with new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.nnz() {
            return Err(dim("csr_with_values", format!("{} values for {} entries", values.len(), self.nnz())));
        }
        Ok(Self {
            values,
            ..self.clone()
        })
    }

    pub fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        self.indptr[r]..self.indptr[r + 1]
    }

    /// Row index of every stored entry, in storage order.
    pub fn entry_rows(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            out.extend(std::iter::repeat_n(r, self.indptr[r + 1] - self.indptr[r]));
        }
        out
    }

    /// Storage position of entry `(r, c)`, if present.
    pub fn find(&self, r: usize, c: usize) -> Option<usize> {
        let range = self.row_range(r);
        self.indices[range.clone()]
            .binary_search(&c)
            .ok()
            .map(|k| range.start + k)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.find(r, c).map_or(0.0, |k| self.values[k])
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for k in self.row_range(r) {
                out.set(r, self.indices[k], self.values[k]);
            }
        }
        out
    }

    /// `self * x` using the stored values.
    pub fn spmm(&self, x: &Tensor) -> Result<Tensor> {
        self.spmm_with(&self.values, x)
    }

    /// `W * x` where `W` has this sparsity pattern and entry values `weights`.
    pub fn spmm_with(&self, weights: &[f64], x: &Tensor) -> Result<Tensor> {
        if x.rows() != self.cols || weights.len() != self.nnz() {
            return Err(dim(
                "spmm",
                format!("{}x{} (nnz {}, {} weights) * {}x{}", self.rows, self.cols, self.nnz(), weights.len(), x.rows(), x.cols()),
            ));
        }
        let d = x.cols();
        let mut out = Tensor::zeros(self.rows, d);
        let xd = x.data();
        let od = out.data_mut();
        for r in 0..self.rows {
            let orow = &mut od[r * d..(r + 1) * d];
            for k in self.indptr[r]..self.indptr[r + 1] {
                let w = weights[k];
                let xrow = &xd[self.indices[k] * d..(self.indices[k] + 1) * d];
                for (o, &xv) in orow.iter_mut().zip(xrow) {
                    *o += w * xv;
                }
            }
        }
        Ok(out)
    }

    /// Accumulate `W^T * g` into `acc` (shape `cols x g.cols`).
    pub(crate) fn spmm_transpose_acc(&self, weights: &[f64], g: &[f64], d: usize, acc: &mut [f64]) {
        for r in 0..self.rows {
            let grow = &g[r * d..(r + 1) * d];
            let span = self.indptr[r]..self.indptr[r + 1];
            for (&w, &c) in weights[span.clone()].iter().zip(&self.indices[span]) {
                for (a, &gv) in acc[c * d..(c + 1) * d].iter_mut().zip(grow) {
                    *a += w * gv;
                }
            }
        }
    }

    pub fn transpose(&self) -> Self {
        let mut trip = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for k in self.row_range(r) {
                trip.push((self.indices[k], r, self.values[k]));
            }
        }
        Self::from_triplets(self.cols, self.rows, trip).expect("transpose of a valid csr is valid")
    }
}
