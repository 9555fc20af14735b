//! Shared oracles and instance builders for the integration suites. These
//! stay independent of the library paths they are used to check: the SVD is
//! a one-sided Jacobi sweep, and dense references are plain scalar loops.

#![allow(dead_code)]

use hyperattn::{mix_seed, AttentionInputs, Generator, Matrix};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// The standard verification instance: i.i.d. Gaussian inputs with queries
/// and keys divided by `sqrt(d)`.
pub fn flat_inputs(n: usize, d: usize, seed: u64) -> AttentionInputs {
    let mut inputs = hyperattn::generate_inputs(Generator::Gaussian, n, d, seed);
    let s = 1.0 / (d as f64).sqrt();
    inputs.q.scale(s);
    inputs.k.scale(s);
    inputs
}

/// Singular values by one-sided Jacobi: rotate column pairs of a working
/// copy until all pairs are orthogonal; the column norms converge to the
/// singular values. Reliable for the small dense matrices used in tests.
pub fn jacobi_singular_values(m: &Matrix) -> Vec<f64> {
    let (rows, cols) = (m.rows(), m.cols());
    let mut a: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..rows).map(|i| m.get(i, j)).collect())
        .collect();
    let eps = 1e-14;
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let (mut app, mut aqq, mut apq) = (0.0, 0.0, 0.0);
                for i in 0..rows {
                    app += a[p][i] * a[p][i];
                    aqq += a[q][i] * a[q][i];
                    apq += a[p][i] * a[q][i];
                }
                off = off.max(apq.abs() / (app * aqq).sqrt().max(1e-300));
                if apq.abs() <= eps * (app * aqq).sqrt() {
                    continue;
                }
                let theta = 0.5 * (2.0 * apq).atan2(app - aqq);
                let (c, s) = (theta.cos(), theta.sin());
                for i in 0..rows {
                    let vp = a[p][i];
                    let vq = a[q][i];
                    a[p][i] = c * vp + s * vq;
                    a[q][i] = -s * vp + c * vq;
                }
            }
        }
        if off < 1e-12 {
            break;
        }
    }
    let mut sv: Vec<f64> = a
        .iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

pub fn jacobi_operator_norm(m: &Matrix) -> f64 {
    jacobi_singular_values(m)[0]
}

/// Dense causal row sums at a global shift, by scalar loops.
pub fn dense_causal_row_sums(q: &Matrix, k: &Matrix, shift: f64) -> Vec<f64> {
    (0..q.rows())
        .map(|i| {
            (0..=i)
                .map(|j| {
                    let s: f64 = q.row(i).iter().zip(k.row(j)).map(|(a, b)| a * b).sum();
                    (s - shift).exp()
                })
                .sum()
        })
        .collect()
}

/// Planted heavy-entry instance for the sketch path. Background scores live
/// in the first `d/2` coordinates (keys normalized to a fixed length so
/// column energies concentrate); each plant occupies its own reserved
/// coordinate, so planted scores are exactly `target` and pollute nothing
/// else. Returns `(Q, K, sorted planted positions)`.
pub fn sketch_planted_instance(
    n: usize,
    d: usize,
    target: f64,
    seed: u64,
) -> (Matrix, Matrix, Vec<(usize, usize)>) {
    let bg = d / 2;
    assert!(bg >= 1 && d > bg);
    // Background score std 0.4: sqrt(bg) * sigma^2 = 0.4.
    let sigma = (0.4f64 / (bg as f64).sqrt()).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5ce7));
    let mut q = Matrix::zeros(n, d);
    let mut k = Matrix::zeros(n, d);
    for i in 0..n {
        for t in 0..bg {
            q.set(i, t, sigma * rng.sample::<f64, _>(StandardNormal));
            k.set(i, t, rng.sample::<f64, _>(StandardNormal));
        }
        let norm: f64 = (0..bg)
            .map(|t| k.get(i, t) * k.get(i, t))
            .sum::<f64>()
            .sqrt();
        if norm > 0.0 {
            let scale = sigma * (bg as f64).sqrt() / norm;
            for t in 0..bg {
                k.set(i, t, k.get(i, t) * scale);
            }
        }
    }
    let rows: Vec<usize> = rand::seq::index::sample(&mut rng, n, d - bg).into_vec();
    let cols: Vec<usize> = rand::seq::index::sample(&mut rng, n, d - bg).into_vec();
    let mut plants = Vec::new();
    for t in 0..(d - bg) {
        let (r, c) = (rows[t], cols[t]);
        let bg_score: f64 = (0..bg).map(|x| q.get(r, x) * k.get(c, x)).sum();
        q.set(r, bg + t, 1.0);
        k.set(c, bg + t, target - bg_score);
        plants.push((r, c));
    }
    plants.sort_unstable();
    (q, k, plants)
}
