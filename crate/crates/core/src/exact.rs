//! Quadratic reference attention: the oracle every estimator is measured
//! against. Only suitable for desk-scale `n`.

use rayon::prelude::*;

use crate::error::Result;
use crate::matrix::{dot, AttentionInputs, DiagonalEstimate, Matrix};
use crate::util::{checked_exp, OverflowSlot};

/// Dense `exp(Q K^T - shift)`. With `shift = 0` this is the attention matrix
/// itself; any other shift rescales it uniformly by `exp(-shift)`, which
/// leaves the row-normalized form unchanged.
pub fn exact_attention_matrix(inputs: &AttentionInputs, shift: f64) -> Result<Matrix> {
    let (q, k) = (&inputs.q, &inputs.k);
    let n = q.rows();
    let mut out = Matrix::zeros(n, n);
    if n == 0 {
        return Ok(out);
    }
    let overflow = OverflowSlot::default();
    out.data_mut()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| {
            let qi = q.row(i);
            for (j, o) in row.iter_mut().enumerate() {
                match checked_exp(dot(qi, k.row(j)) - shift) {
                    Ok(e) => *o = e,
                    Err(arg) => {
                        overflow.record(i, j, arg);
                        return;
                    }
                }
            }
        });
    overflow.finish()?;
    Ok(out)
}

/// Row sums of a nonnegative matrix, packaged as a diagonal.
pub fn exact_row_sums(a: &Matrix) -> Result<DiagonalEstimate> {
    let sums = (0..a.rows()).map(|i| a.row(i).iter().sum()).collect();
    DiagonalEstimate::new(sums)
}

/// Full softmax attention `D^{-1} A V`, optionally under the lower-triangular
/// causal mask. Uses per-row max subtraction, which is safe because the
/// normalized output is invariant to per-row shifts. Never materializes the
/// `n x n` matrix.
pub fn exact_attention(inputs: &AttentionInputs, causal: bool) -> Matrix {
    let (q, k, v) = (&inputs.q, &inputs.k, &inputs.v);
    let n = q.rows();
    let d = v.cols();
    let mut out = Matrix::zeros(n, d);
    if n == 0 {
        return out;
    }
    out.data_mut()
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(i, out_row)| {
            let qi = q.row(i);
            let limit = if causal { i + 1 } else { n };
            let mut scores = vec![0.0; limit];
            let mut max = f64::NEG_INFINITY;
            for (j, s) in scores.iter_mut().enumerate() {
                *s = dot(qi, k.row(j));
                if *s > max {
                    max = *s;
                }
            }
            let mut denom = 0.0;
            for (j, s) in scores.iter().enumerate() {
                let w = (s - max).exp();
                denom += w;
                let vj = v.row(j);
                for (o, &x) in out_row.iter_mut().zip(vj) {
                    *o += w * x;
                }
            }
            for o in out_row.iter_mut() {
                *o /= denom;
            }
        });
    out
}
