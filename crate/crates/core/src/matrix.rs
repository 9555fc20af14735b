//! Dense row-major matrices and the attention input/diagonal types.
//!
//! All parallel kernels reduce in a fixed order within each output row, so
//! results are bit-identical regardless of the number of worker threads.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Chunk width used when a reduction has to cross rows. Fixed so that the
/// partial-sum tree does not depend on the thread count.
const REDUCE_CHUNK: usize = 256;

/// A dense row-major matrix of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting shape mismatches and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix entry by entry. Intended for tests and small oracles.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Copies the row range `[start, end)` into a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.rows);
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    /// Entrywise difference `self - rhs`.
    pub fn sub(&self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a - b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// `self * rhs`, parallel over output rows, ascending-k reduction per row.
    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, rhs.rows,
            "matmul: inner dimensions {} vs {}",
            self.cols, rhs.rows
        );
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        if out.data.is_empty() {
            return out;
        }
        out.data
            .par_chunks_mut(rhs.cols)
            .enumerate()
            .for_each(|(i, out_row)| {
                let a_row = self.row(i);
                for (k, &a) in a_row.iter().enumerate() {
                    let b_row = rhs.row(k);
                    for (o, &b) in out_row.iter_mut().zip(b_row) {
                        *o += a * b;
                    }
                }
            });
        out
    }

    /// `self * rhs^T`; both operands are traversed row-contiguously.
    pub fn matmul_nt(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, rhs.cols,
            "matmul_nt: column counts {} vs {}",
            self.cols, rhs.cols
        );
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        if out.data.is_empty() {
            return out;
        }
        out.data
            .par_chunks_mut(rhs.rows)
            .enumerate()
            .for_each(|(i, out_row)| {
                let a_row = self.row(i);
                for (j, o) in out_row.iter_mut().enumerate() {
                    *o = dot(a_row, rhs.row(j));
                }
            });
        out
    }

    /// `self * v`, parallel over rows.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len());
        let mut out = vec![0.0; self.rows];
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            *o = dot(self.row(i), v);
        });
        out
    }

    /// `self^T * v`. Fixed-size row chunks keep the cross-row reduction
    /// deterministic.
    pub fn matvec_t(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len());
        let partials: Vec<Vec<f64>> = self
            .data
            .par_chunks(REDUCE_CHUNK * self.cols.max(1))
            .enumerate()
            .map(|(c, chunk)| {
                let mut acc = vec![0.0; self.cols];
                for (r, row) in chunk.chunks_exact(self.cols).enumerate() {
                    let coeff = v[c * REDUCE_CHUNK + r];
                    for (a, &x) in acc.iter_mut().zip(row) {
                        *a += coeff * x;
                    }
                }
                acc
            })
            .collect();
        let mut out = vec![0.0; self.cols];
        for p in partials {
            for (o, x) in out.iter_mut().zip(p) {
                *o += x;
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        let partials: Vec<f64> = self
            .data
            .par_chunks(REDUCE_CHUNK * self.cols.max(1))
            .map(|chunk| chunk.iter().map(|v| v * v).sum::<f64>())
            .collect();
        partials.iter().sum::<f64>().sqrt()
    }

    /// Squared Euclidean norms of each row.
    pub fn row_sq_norms(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| dot(self.row(i), self.row(i)))
            .collect()
    }

    /// Largest Euclidean row norm; used by the automatic shift policy.
    pub fn max_row_norm(&self) -> f64 {
        self.row_sq_norms()
            .into_iter()
            .fold(0.0f64, f64::max)
            .sqrt()
    }
}

/// Sequential dot product; the single reduction primitive shared by every
/// kernel above.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// The `(Q, K, V)` triple every attention operation consumes.
#[derive(Debug, Clone)]
pub struct AttentionInputs {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
}

impl AttentionInputs {
    /// Requires all three matrices to share the same `n x d` shape.
    pub fn new(q: Matrix, k: Matrix, v: Matrix) -> Result<Self> {
        let shape = (q.rows(), q.cols());
        if (k.rows(), k.cols()) != shape || (v.rows(), v.cols()) != shape {
            return Err(Error::Dimensions(format!(
                "q is {}x{}, k is {}x{}, v is {}x{}",
                q.rows(),
                q.cols(),
                k.rows(),
                k.cols(),
                v.rows(),
                v.cols()
            )));
        }
        Ok(Self { q, k, v })
    }

    pub fn n(&self) -> usize {
        self.q.rows()
    }

    pub fn d(&self) -> usize {
        self.q.cols()
    }

    /// Returns a copy with the queries scaled by `s` (e.g. `1/sqrt(d)`).
    pub fn with_scaled_q(mut self, s: f64) -> Self {
        self.q.scale(s);
        self
    }
}

/// Strictly positive per-row sums: the exact diagonal or its estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalEstimate {
    values: Vec<f64>,
}

impl DiagonalEstimate {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for (i, v) in values.iter().enumerate() {
            if !(v.is_finite() && *v > 0.0) {
                return Err(Error::NonPositiveRowSum { row: i });
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }
}
