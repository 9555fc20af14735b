//! Operator-norm and stable-rank estimation by power iteration.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::matrix::Matrix;

pub const DEFAULT_REL_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 10_000;
pub const DEFAULT_SEED: u64 = 0x5eed;

/// A spectral quantity together with its convergence status.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Largest singular value of `m` by power iteration on `m^T m` from a seeded
/// random unit start. For matrices with a spectral gap the result is within
/// `rel_tol` of the true value; without convergence the last iterate is
/// returned with `converged = false`.
pub fn operator_norm(m: &Matrix, rel_tol: f64, max_iter: usize, seed: u64) -> SpectralEstimate {
    assert!(rel_tol > 0.0, "rel_tol must be positive");
    let cols = m.cols();
    if cols == 0 || m.rows() == 0 {
        return SpectralEstimate {
            value: 0.0,
            converged: true,
            iterations: 0,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..cols).map(|_| rng.random::<f64>() - 0.5).collect();
    normalize(&mut v);
    let mut sigma = 0.0;
    for iter in 1..=max_iter {
        let u = m.matvec(&v);
        let new_sigma = norm(&u);
        if new_sigma == 0.0 {
            return SpectralEstimate {
                value: 0.0,
                converged: true,
                iterations: iter,
            };
        }
        let mut w = m.matvec_t(&u);
        let wn = norm(&w);
        if wn == 0.0 {
            return SpectralEstimate {
                value: new_sigma,
                converged: true,
                iterations: iter,
            };
        }
        for x in &mut w {
            *x /= wn;
        }
        v = w;
        let done = (new_sigma - sigma).abs() <= rel_tol * new_sigma;
        sigma = new_sigma;
        if done {
            return SpectralEstimate {
                value: sigma,
                converged: true,
                iterations: iter,
            };
        }
    }
    SpectralEstimate {
        value: sigma,
        converged: false,
        iterations: max_iter,
    }
}

/// `||m||_F^2 / sigma_max^2`. Convergence status propagates from the
/// operator-norm estimate.
pub fn stable_rank(m: &Matrix, rel_tol: f64) -> SpectralEstimate {
    let op = operator_norm(m, rel_tol, DEFAULT_MAX_ITER, DEFAULT_SEED);
    let f = m.frobenius_norm();
    SpectralEstimate {
        value: if op.value > 0.0 {
            (f / op.value).powi(2)
        } else {
            0.0
        },
        converged: op.converged,
        iterations: op.iterations,
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    } else if let Some(first) = v.first_mut() {
        *first = 1.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix() {
        let m = Matrix::from_fn(3, 3, |i, j| if i == j { [3.0, 1.0, 0.5][i] } else { 0.0 });
        let est = operator_norm(&m, 1e-6, 10_000, 1);
        assert!(est.converged);
        assert!((est.value - 3.0).abs() <= 1e-6 * 3.0);
    }

    #[test]
    fn all_ones_is_rank_one() {
        for n in [2usize, 5, 17] {
            let m = Matrix::from_fn(n, n, |_, _| 1.0);
            let est = operator_norm(&m, 1e-6, 10_000, 7);
            assert!(est.converged);
            assert!((est.value - n as f64).abs() <= 1e-6 * n as f64);
        }
    }

    #[test]
    fn zero_matrix() {
        let est = operator_norm(&Matrix::zeros(4, 4), 1e-6, 100, 0);
        assert_eq!(est.value, 0.0);
        assert!(est.converged);
    }

    #[test]
    fn transpose_symmetry() {
        let m = Matrix::from_fn(9, 5, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let a = operator_norm(&m, 1e-8, 10_000, 3);
        let b = operator_norm(&m.transpose(), 1e-8, 10_000, 4);
        assert!((a.value - b.value).abs() <= 2e-8 * a.value);
    }

    #[test]
    fn stable_rank_identity() {
        for k in [2usize, 6, 11] {
            let eye = Matrix::from_fn(k, k, |i, j| (i == j) as u8 as f64);
            let est = stable_rank(&eye, 1e-7);
            assert!((est.value - k as f64).abs() <= 1e-5 * k as f64);
        }
    }

    #[test]
    fn stable_rank_rank_one() {
        let u: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin() + 1.2).collect();
        let w: Vec<f64> = (0..8).map(|i| (i as f64 * 0.11).cos() - 0.4).collect();
        let m = Matrix::from_fn(8, 8, |i, j| u[i] * w[j]);
        let est = stable_rank(&m, 1e-7);
        assert!((est.value - 1.0).abs() <= 2e-6);
    }
}
