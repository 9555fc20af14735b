//! Synthetic input generators for verification runs and sweeps.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::matrix::{dot, AttentionInputs, Matrix};
use crate::util::mix_seed;

/// Input families: plain i.i.d. Gaussian, Gaussian with one boosted score
/// per row, and unit-norm rows (near-orthogonal in high dimension).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Generator {
    Gaussian,
    Planted { target: f64 },
    NearOrthogonal,
}

impl Generator {
    pub fn parse(name: &str, target: f64) -> Option<Self> {
        match name {
            "gaussian" => Some(Generator::Gaussian),
            "planted" => Some(Generator::Planted { target }),
            "orthogonal" => Some(Generator::NearOrthogonal),
            _ => None,
        }
    }
}

pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

/// Generates an `(n, d)` input triple for the given family.
pub fn generate_inputs(gen: Generator, n: usize, d: usize, seed: u64) -> AttentionInputs {
    match gen {
        Generator::Gaussian => AttentionInputs {
            q: gaussian_matrix(n, d, mix_seed(seed, 1)),
            k: gaussian_matrix(n, d, mix_seed(seed, 2)),
            v: gaussian_matrix(n, d, mix_seed(seed, 3)),
        },
        Generator::Planted { target } => planted_inputs(n, d, target, seed).0,
        Generator::NearOrthogonal => {
            let normalize = |mut m: Matrix| {
                for i in 0..m.rows() {
                    let norm = dot(m.row(i), m.row(i)).sqrt();
                    if norm > 0.0 {
                        for v in m.row_mut(i) {
                            *v /= norm;
                        }
                    }
                }
                m
            };
            AttentionInputs {
                q: normalize(gaussian_matrix(n, d, mix_seed(seed, 1))),
                k: normalize(gaussian_matrix(n, d, mix_seed(seed, 2))),
                v: gaussian_matrix(n, d, mix_seed(seed, 3)),
            }
        }
    }
}

/// Gaussian inputs where each row `i` gets one boosted score: the key at a
/// random column is adjusted along `q_i` so that `<q_i, k_(j_i)>` equals the
/// target. Returns the planted positions.
pub fn planted_inputs(
    n: usize,
    d: usize,
    target: f64,
    seed: u64,
) -> (AttentionInputs, Vec<(usize, usize)>) {
    let q = gaussian_matrix(n, d, mix_seed(seed, 1));
    let mut k = gaussian_matrix(n, d, mix_seed(seed, 2));
    let v = gaussian_matrix(n, d, mix_seed(seed, 3));
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 4));
    let mut plants = Vec::with_capacity(n);
    for i in 0..n {
        let j = rng.random_range(0..n);
        let qi = q.row(i);
        let qn = dot(qi, qi);
        if qn == 0.0 {
            continue;
        }
        let coeff = (target - dot(qi, k.row(j))) / qn;
        for (t, kv) in k.row_mut(j).iter_mut().enumerate() {
            *kv += coeff * qi[t];
        }
        plants.push((i, j));
    }
    (AttentionInputs { q, k, v }, plants)
}
