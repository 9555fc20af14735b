//! Sign-random-projection hashing with Gray-coded bucket order, and the
//! sorted-hash mask builder.
//!
//! Buckets are ordered so that walking the bucket index by one (mod `2^r`)
//! flips exactly one sign bit. Under that ordering, for vectors at angle
//! `theta` the collision probability is `(1 - theta/pi)^r` and the
//! adjacent-bucket probability is `2 theta/pi (1 - theta/pi)^{r-1}`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mask::MaskSpec;
use crate::matrix::{dot, Matrix};

/// Hash family parameters: `r` sign bits (so `2^r` buckets) and the seed the
/// hyperplanes are derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LshParams {
    pub bits: u32,
    pub seed: u64,
}

impl LshParams {
    pub fn new(bits: u32, seed: u64) -> Result<Self> {
        if !(1..=30).contains(&bits) {
            return Err(Error::InvalidParameter(format!(
                "hash bits must be in [1, 30], got {bits}"
            )));
        }
        Ok(Self { bits, seed })
    }
}

/// A concrete hasher: `r` i.i.d. standard Gaussian hyperplanes in dimension
/// `d`, drawn deterministically from the seed.
#[derive(Debug, Clone)]
pub struct LshHasher {
    planes: Vec<f64>,
    dim: usize,
    bits: u32,
}

impl LshHasher {
    pub fn new(dim: usize, params: &LshParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let planes = (0..params.bits as usize * dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self {
            planes,
            dim,
            bits: params.bits,
        }
    }

    pub fn num_buckets(&self) -> u64 {
        1u64 << self.bits
    }

    /// Bucket index of a point: the Gray rank of its sign-bit pattern.
    /// The zero vector produces the all-zero pattern and lands in bucket 0.
    pub fn hash(&self, x: &[f64]) -> u32 {
        assert_eq!(x.len(), self.dim);
        let mut pattern = 0u32;
        for b in 0..self.bits as usize {
            let plane = &self.planes[b * self.dim..(b + 1) * self.dim];
            if dot(x, plane) > 0.0 {
                pattern |= 1 << b;
            }
        }
        gray_rank(pattern)
    }
}

/// One-off bucket query. Building an [`LshHasher`] once and reusing it is
/// cheaper when hashing many points.
pub fn hash_point(x: &[f64], params: &LshParams) -> u32 {
    LshHasher::new(x.len(), params).hash(x)
}

/// Binary-reflected Gray codeword of a rank.
pub fn gray_code(rank: u32) -> u32 {
    rank ^ (rank >> 1)
}

/// Inverse of [`gray_code`]: position of a codeword in the Gray sequence.
pub fn gray_rank(codeword: u32) -> u32 {
    let mut rank = codeword;
    let mut shift = codeword;
    while shift > 0 {
        shift >>= 1;
        rank ^= shift;
    }
    rank
}

/// Closed-form `Pr[H(x) = H(y)] = (1 - theta/pi)^r`.
pub fn collision_probability(theta: f64, bits: u32) -> f64 {
    (1.0 - theta / std::f64::consts::PI).powi(bits as i32)
}

/// Closed-form `Pr[H(x) = H(y) +- 1 (mod 2^r)] = 2 theta/pi (1 - theta/pi)^{r-1}`.
/// The two neighbor events are distinct only for `r >= 2`.
pub fn adjacent_bucket_probability(theta: f64, bits: u32) -> f64 {
    let p = 1.0 - theta / std::f64::consts::PI;
    2.0 * (theta / std::f64::consts::PI) * p.powi(bits as i32 - 1)
}

/// Hashes `Q` and `K` rows with a shared hasher and returns the block mask
/// induced by sorting each side by `(bucket, original index)`. Ties break on
/// the original index, so identical inputs always produce identical masks.
pub fn sort_lsh_mask(
    q: &Matrix,
    k: &Matrix,
    block_size: usize,
    params: &LshParams,
) -> Result<MaskSpec> {
    if q.cols() != k.cols() {
        return Err(Error::Dimensions(format!(
            "q has {} columns, k has {}",
            q.cols(),
            k.cols()
        )));
    }
    if block_size == 0 {
        return Err(Error::InvalidParameter("block size must be >= 1".into()));
    }
    let hasher = LshHasher::new(q.cols(), params);
    let perm_q = bucket_sort_positions(q, &hasher);
    let perm_k = bucket_sort_positions(k, &hasher);
    MaskSpec::block_perm(perm_q, perm_k, block_size)
}

/// Position of each row after the stable sort by hash bucket.
fn bucket_sort_positions(m: &Matrix, hasher: &LshHasher) -> Vec<usize> {
    let buckets: Vec<u32> = (0..m.rows())
        .into_par_iter()
        .map(|i| hasher.hash(m.row(i)))
        .collect();
    let mut order: Vec<usize> = (0..m.rows()).collect();
    order.sort_by_key(|&i| (buckets[i], i));
    let mut positions = vec![0usize; m.rows()];
    for (pos, &i) in order.iter().enumerate() {
        positions[i] = pos;
    }
    positions
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn gaussian_vec(d: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn params_validate_bits() {
        assert!(LshParams::new(0, 1).is_err());
        assert!(LshParams::new(31, 1).is_err());
        assert!(LshParams::new(30, 1).is_ok());
    }

    #[test]
    fn scaling_is_invariant() {
        let params = LshParams::new(6, 42).unwrap();
        let hasher = LshHasher::new(8, &params);
        for s in 1..40 {
            let x = gaussian_vec(8, s);
            let x2: Vec<f64> = x.iter().map(|v| v * 2.0).collect();
            assert_eq!(hasher.hash(&x), hasher.hash(&x2));
        }
    }

    #[test]
    fn negation_flips_every_bit() {
        let params = LshParams::new(7, 9).unwrap();
        let hasher = LshHasher::new(6, &params);
        let full = (1u32 << 7) - 1;
        for s in 0..40 {
            let x = gaussian_vec(6, s);
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            let p = gray_code(hasher.hash(&x));
            let pn = gray_code(hasher.hash(&neg));
            assert_eq!(p ^ pn, full);
        }
    }

    #[test]
    fn zero_vector_lands_in_bucket_zero() {
        let params = LshParams::new(5, 3).unwrap();
        let hasher = LshHasher::new(4, &params);
        assert_eq!(hasher.hash(&[0.0; 4]), 0);
        assert_eq!(hash_point(&[0.0; 4], &params), 0);
    }

    #[test]
    fn hash_point_agrees_with_hasher() {
        let params = LshParams::new(6, 13).unwrap();
        let hasher = LshHasher::new(5, &params);
        for s in 0..10 {
            let x = gaussian_vec(5, s);
            assert_eq!(hash_point(&x, &params), hasher.hash(&x));
        }
    }

    #[test]
    fn gray_round_trip() {
        for i in 0..(1u32 << 12) {
            assert_eq!(gray_rank(gray_code(i)), i);
        }
    }

    #[test]
    fn probability_formulas_trivial_values() {
        for r in [1u32, 3, 8] {
            assert!((collision_probability(0.0, r) - 1.0).abs() < 1e-15);
            assert!(collision_probability(std::f64::consts::PI, r).abs() < 1e-15);
        }
        let p = collision_probability(std::f64::consts::FRAC_PI_2, 3);
        assert!((p - 0.125).abs() < 1e-15);
    }

    #[test]
    fn single_block_mask_is_all_ones() {
        let q = Matrix::from_fn(6, 3, |i, j| ((i + j) % 3) as f64 - 1.0);
        let mask = sort_lsh_mask(&q, &q, 6, &LshParams::new(3, 0).unwrap()).unwrap();
        assert_eq!(mask.nnz(), 36);
        for i in 0..6 {
            for j in 0..6 {
                assert!(mask.contains(i, j));
            }
        }
    }

    #[test]
    fn identical_rows_keep_identity_permutation() {
        let q = Matrix::from_fn(5, 3, |_, j| j as f64 + 0.5);
        let mask = sort_lsh_mask(&q, &q, 1, &LshParams::new(4, 11).unwrap()).unwrap();
        match mask {
            MaskSpec::BlockPerm { perm_q, perm_k, .. } => {
                assert_eq!(perm_q, (0..5).collect::<Vec<_>>());
                assert_eq!(perm_k, (0..5).collect::<Vec<_>>());
            }
            _ => panic!("expected block mask"),
        }
    }

    #[test]
    fn mask_is_deterministic() {
        let q = Matrix::from_fn(32, 4, |i, j| ((i * 13 + j * 7) % 17) as f64 - 8.0);
        let k = Matrix::from_fn(32, 4, |i, j| ((i * 5 + j * 3) % 19) as f64 - 9.0);
        let params = LshParams::new(5, 77).unwrap();
        let a = sort_lsh_mask(&q, &k, 4, &params).unwrap();
        let b = sort_lsh_mask(&q, &k, 4, &params).unwrap();
        assert_eq!(a, b);
    }
}
