//! Row sampling for approximate matrix products: `m` value-matrix rows drawn
//! by squared row norm (or reused uniform indices), applied to the
//! normalized attention product without ever forming the full matrix.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{dot, DiagonalEstimate, Matrix};
use crate::util::{checked_exp, OverflowSlot};

/// The sampling matrix `S`: row `r` is `weights[r] * e(indices[r])`.
#[derive(Debug, Clone)]
pub struct RowNormSampler {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

impl RowNormSampler {
    pub fn m(&self) -> usize {
        self.indices.len()
    }
}

/// Draws `m` i.i.d. indices by squared row norms of `v` with weights
/// `||V||_F / (sqrt(m) ||V_l||)`. When `injected` indices are supplied
/// (the shared-index reuse path), they are used verbatim with uniform
/// weights `sqrt(n/m)` instead. Rows with zero norm have probability zero.
pub fn build_sampler(
    v: &Matrix,
    m: usize,
    seed: u64,
    injected: Option<&[usize]>,
) -> Result<RowNormSampler> {
    let n = v.rows();
    if m == 0 {
        return Err(Error::InvalidParameter("sample count must be >= 1".into()));
    }
    let sq_norms = v.row_sq_norms();
    let total: f64 = sq_norms.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroValueMatrix);
    }

    if let Some(idx) = injected {
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidParameter(format!(
                "injected index {bad} out of range for n = {n}"
            )));
        }
        let w = (n as f64 / idx.len() as f64).sqrt();
        return Ok(RowNormSampler {
            indices: idx.to_vec(),
            weights: vec![w; idx.len()],
        });
    }

    let mut prefix = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &s in &sq_norms {
        acc += s;
        prefix.push(acc);
    }
    let frob = total.sqrt();
    let root_m = (m as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for _ in 0..m {
        let target = rng.random::<f64>() * total;
        let mut l = prefix.partition_point(|&p| p <= target);
        if l >= n {
            l = n - 1;
        }
        indices.push(l);
        weights.push(frob / (root_m * sq_norms[l].sqrt()));
    }
    Ok(RowNormSampler { indices, weights })
}

/// Unnormalized sampled product: `exp(Q K^T - shift) S^T . S V`, built row by
/// row in `O(n m d)` without materializing the attention matrix.
pub fn sampled_product(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    sampler: &RowNormSampler,
    shift: f64,
) -> Result<Matrix> {
    sampled_attention_impl(q, k, v, None, sampler, shift)
}

/// Normalized sampled attention `D~^{-1} exp(Q K^T - shift) S^T . S V`.
/// The diagonal must have been produced at the same shift.
pub fn apply_sampled_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    d_tilde: &DiagonalEstimate,
    sampler: &RowNormSampler,
    shift: f64,
) -> Result<Matrix> {
    sampled_attention_impl(q, k, v, Some(d_tilde), sampler, shift)
}

fn sampled_attention_impl(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    d_tilde: Option<&DiagonalEstimate>,
    sampler: &RowNormSampler,
    shift: f64,
) -> Result<Matrix> {
    let n = q.rows();
    let d = v.cols();
    let m = sampler.m();
    if k.rows() != v.rows() {
        return Err(Error::Dimensions(format!(
            "k has {} rows, v has {}",
            k.rows(),
            v.rows()
        )));
    }
    if let Some(dt) = d_tilde {
        if dt.len() != n {
            return Err(Error::Dimensions(format!(
                "diagonal has {} entries for {} rows",
                dt.len(),
                n
            )));
        }
    }
    if let Some(&bad) = sampler.indices.iter().find(|&&l| l >= k.rows()) {
        return Err(Error::InvalidParameter(format!(
            "sampled index {bad} out of range for {} rows",
            k.rows()
        )));
    }

    // S V: the m weighted value rows, shared across output rows.
    let mut sv = Matrix::zeros(m, d);
    for r in 0..m {
        let w = sampler.weights[r];
        let src = v.row(sampler.indices[r]);
        for (o, &x) in sv.row_mut(r).iter_mut().zip(src) {
            *o = w * x;
        }
    }

    let mut out = Matrix::zeros(n, d);
    if n == 0 {
        return Ok(out);
    }
    let overflow = OverflowSlot::default();
    out.data_mut()
        .par_chunks_mut(d.max(1))
        .enumerate()
        .for_each(|(i, out_row)| {
            let qi = q.row(i);
            for r in 0..m {
                let l = sampler.indices[r];
                let e = match checked_exp(dot(qi, k.row(l)) - shift) {
                    Ok(e) => e,
                    Err(arg) => {
                        overflow.record(i, l, arg);
                        return;
                    }
                };
                let coeff = sampler.weights[r] * e;
                for (o, &x) in out_row.iter_mut().zip(sv.row(r)) {
                    *o += coeff * x;
                }
            }
            if let Some(dt) = d_tilde {
                let inv = 1.0 / dt.get(i);
                for o in out_row.iter_mut() {
                    *o *= inv;
                }
            }
        });
    overflow.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{exact_attention, exact_attention_matrix, exact_row_sums};
    use crate::matrix::AttentionInputs;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn rejects_zero_value_matrix() {
        let err = build_sampler(&Matrix::zeros(4, 2), 3, 0, None).unwrap_err();
        assert_eq!(err, Error::ZeroValueMatrix);
    }

    #[test]
    fn point_mass_sampler_is_exact() {
        let mut v = Matrix::zeros(6, 3);
        for j in 0..3 {
            v.set(2, j, 1.0 + j as f64);
        }
        let s = build_sampler(&v, 4, 9, None).unwrap();
        assert!(s.indices.iter().all(|&l| l == 2));
        for &w in &s.weights {
            assert!((w - 1.0 / 2.0).abs() < 1e-12); // 1/sqrt(m), m = 4
        }
        let q = gaussian(6, 3, 1);
        let k = gaussian(6, 3, 2);
        let inputs = AttentionInputs::new(q.clone(), k.clone(), v.clone()).unwrap();
        let a = exact_attention_matrix(&inputs, 0.0).unwrap();
        let d = exact_row_sums(&a).unwrap();
        let got = apply_sampled_attention(&q, &k, &v, &d, &s, 0.0).unwrap();
        let want = exact_attention(&inputs, false);
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0));
        }
    }

    #[test]
    fn complete_uniform_cover_is_exact() {
        let n = 10;
        let q = gaussian(n, 4, 3);
        let k = gaussian(n, 4, 4);
        let v = gaussian(n, 4, 5);
        let idx: Vec<usize> = (0..n).collect();
        let s = build_sampler(&v, n, 0, Some(&idx)).unwrap();
        assert!(s.weights.iter().all(|&w| (w - 1.0).abs() < 1e-15));
        let inputs = AttentionInputs::new(q.clone(), k.clone(), v.clone()).unwrap();
        let a = exact_attention_matrix(&inputs, 0.0).unwrap();
        let d = exact_row_sums(&a).unwrap();
        let got = apply_sampled_attention(&q, &k, &v, &d, &s, 0.0).unwrap();
        let want = exact_attention(&inputs, false);
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0));
        }
    }

    #[test]
    fn shift_consistency() {
        let n = 12;
        let q = gaussian(n, 3, 7);
        let k = gaussian(n, 3, 8);
        let v = gaussian(n, 3, 9);
        let s = build_sampler(&v, 6, 11, None).unwrap();
        let inputs = AttentionInputs::new(q.clone(), k.clone(), v.clone()).unwrap();
        let mut outs = Vec::new();
        for shift in [0.0, 2.0] {
            let a = exact_attention_matrix(&inputs, shift).unwrap();
            let d = exact_row_sums(&a).unwrap();
            outs.push(apply_sampled_attention(&q, &k, &v, &d, &s, shift).unwrap());
        }
        for (a, b) in outs[0].data().iter().zip(outs[1].data()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn sampling_distribution_matches_row_norms() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let n = 512;
        let v = gaussian(n, 8, 13);
        let sq = v.row_sq_norms();
        let total: f64 = sq.iter().sum();
        let draws = 100_000usize;
        let mut counts = vec![0usize; n];
        let s = build_sampler(&v, draws, 17, None).unwrap();
        for &l in &s.indices {
            counts[l] += 1;
        }
        let mut chi2 = 0.0;
        for i in 0..n {
            let expect = draws as f64 * sq[i] / total;
            let diff = counts[i] as f64 - expect;
            chi2 += diff * diff / expect;
        }
        let critical = ChiSquared::new((n - 1) as f64).unwrap().inverse_cdf(0.999);
        assert!(chi2 < critical, "chi2 = {chi2}, critical = {critical}");
    }
}
