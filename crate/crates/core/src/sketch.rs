//! Sketch-based heavy-entry detection: find score entries that carry a
//! `1/tau` fraction of their column's energy without ever forming the
//! `n x n` score matrix. The score matrix is only touched through the
//! sketched product `(T Q) K^T`, and candidates are decoded per column by
//! median-of-repetitions estimates with a linear scan.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mask::MaskSpec;
use crate::matrix::Matrix;
use crate::util::mix_seed;

/// Fraction of the promise gap `[1/(2 tau), 1/tau]` at which candidates are
/// accepted.
const ACCEPT_DIVISOR: f64 = 1.5;

#[derive(Debug, Clone, Copy)]
pub struct SketchParams {
    /// Heaviness threshold: target entries with squared value at least
    /// `||column||^2 / tau`.
    pub tau: f64,
    /// Independent sketch repetitions; must be odd for the median.
    pub repetitions: usize,
    /// Buckets per repetition; at least `8 * ceil(tau)` so a heavy entry
    /// dominates its bucket in expectation.
    pub sketch_rows: usize,
    pub seed: u64,
}

impl SketchParams {
    pub fn new(tau: f64, seed: u64) -> Result<Self> {
        if !(tau.is_finite() && tau > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "tau must exceed 1, got {tau}"
            )));
        }
        let rows = 8 * tau.ceil() as usize;
        Self::with_shape(tau, 7, rows, seed)
    }

    pub fn with_shape(tau: f64, repetitions: usize, sketch_rows: usize, seed: u64) -> Result<Self> {
        if !(tau.is_finite() && tau > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "tau must exceed 1, got {tau}"
            )));
        }
        if repetitions % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "repetitions must be odd, got {repetitions}"
            )));
        }
        if (sketch_rows as f64) < 8.0 * tau {
            return Err(Error::InvalidParameter(format!(
                "sketch_rows must be at least 8*tau = {}, got {sketch_rows}",
                8.0 * tau
            )));
        }
        Ok(Self {
            tau,
            repetitions,
            sketch_rows,
            seed,
        })
    }

    /// Total sketch height `t = repetitions * sketch_rows`.
    pub fn height(&self) -> usize {
        self.repetitions * self.sketch_rows
    }
}

/// The implicit `t x n` CountSketch matrix: per repetition, each of the `n`
/// coordinates is routed to one bucket with a random sign.
#[derive(Debug, Clone)]
pub struct CountSketch {
    n: usize,
    params: SketchParams,
}

impl CountSketch {
    pub fn new(n: usize, params: SketchParams) -> Self {
        Self { n, params }
    }

    #[inline]
    fn route(&self, rep: usize, i: usize) -> (usize, f64) {
        let h = mix_seed(self.params.seed, ((rep as u64) << 32) ^ i as u64);
        let bucket = (h >> 1) as usize % self.params.sketch_rows;
        let sign = if h & 1 == 0 { 1.0 } else { -1.0 };
        (bucket, sign)
    }

    /// `T X` for an `n x d` matrix `X`, of shape `t x d`. Linear in the
    /// entries of `X`.
    pub fn sketch_matrix(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.rows(), self.n);
        let d = x.cols();
        let rows = self.params.sketch_rows;
        let mut out = Matrix::zeros(self.params.height(), d);
        let out_data = out.data_mut();
        let chunks: Vec<(usize, Vec<f64>)> = (0..self.params.repetitions)
            .into_par_iter()
            .map(|rep| {
                let mut block = vec![0.0; rows * d];
                for i in 0..self.n {
                    let (bucket, sign) = self.route(rep, i);
                    let dst = &mut block[bucket * d..(bucket + 1) * d];
                    for (o, &v) in dst.iter_mut().zip(x.row(i)) {
                        *o += sign * v;
                    }
                }
                (rep, block)
            })
            .collect();
        for (rep, block) in chunks {
            out_data[rep * rows * d..(rep + 1) * rows * d].copy_from_slice(&block);
        }
        out
    }

    /// Median-of-repetitions estimate of coordinate `i` from one sketched
    /// column (`t` values laid out repetition-major).
    fn decode(&self, column: &[f64], i: usize, scratch: &mut Vec<f64>) -> f64 {
        scratch.clear();
        for rep in 0..self.params.repetitions {
            let (bucket, sign) = self.route(rep, i);
            scratch.push(sign * column[rep * self.params.sketch_rows + bucket]);
        }
        median(scratch)
    }
}

fn median(values: &mut [f64]) -> f64 {
    let mid = values.len() / 2;
    let (_, v, _) = values.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *v
}

/// Per-column squared-norm estimates from the sketched product: median over
/// repetitions of the per-repetition bucket energy sums (each of which is an
/// unbiased estimator of the true column energy).
pub fn column_energy_estimates(sketch: &Matrix, params: &SketchParams) -> Vec<f64> {
    let reps = params.repetitions;
    let rows = params.sketch_rows;
    assert_eq!(sketch.rows(), reps * rows);
    let n = sketch.cols();
    (0..n)
        .into_par_iter()
        .map(|j| {
            let mut per_rep: Vec<f64> = (0..reps)
                .map(|rep| {
                    let mut e = 0.0;
                    for b in 0..rows {
                        let v = sketch.get(rep * rows + b, j);
                        e += v * v;
                    }
                    e
                })
                .collect();
            median(&mut per_rep)
        })
        .collect()
}

/// Finds entries `(i, j)` whose estimated squared score reaches
/// `||column j||^2 / (1.5 tau)`. On the usual success event this returns
/// every entry with true squared score at least `||col||^2 / tau` and no
/// entry at or below `||col||^2 / (2 tau)`. The score matrix `Q K^T` is
/// never materialized; decoding scans candidates per column.
pub fn sketch_heavy_mask(q: &Matrix, k: &Matrix, params: &SketchParams) -> Result<MaskSpec> {
    if q.cols() != k.cols() {
        return Err(Error::Dimensions(format!(
            "q has {} columns, k has {}",
            q.cols(),
            k.cols()
        )));
    }
    let n = q.rows();
    let cs = CountSketch::new(n, *params);
    let tq = cs.sketch_matrix(q); // t x d
    let sketched = tq.matmul_nt(k); // t x n == T (Q K^T)
    let energies = column_energy_estimates(&sketched, params);

    let m = k.rows();
    let mut by_column: Vec<Vec<(usize, usize)>> = Vec::new();
    (0..m)
        .into_par_iter()
        .map(|j| {
            let threshold = energies[j] / (ACCEPT_DIVISOR * params.tau);
            if threshold <= 0.0 {
                // Zero-energy column: nothing can be heavy in it.
                return Vec::new();
            }
            let column: Vec<f64> = (0..sketched.rows()).map(|r| sketched.get(r, j)).collect();
            let mut scratch = Vec::with_capacity(params.repetitions);
            let mut found = Vec::new();
            for i in 0..n {
                let est = cs.decode(&column, i, &mut scratch);
                if est * est >= threshold {
                    found.push((i, j));
                }
            }
            found
        })
        .collect_into_vec(&mut by_column);

    let mut entries: Vec<(usize, usize)> = by_column.into_iter().flatten().collect();
    entries.sort_unstable();
    MaskSpec::explicit(entries, n.max(m))
}
