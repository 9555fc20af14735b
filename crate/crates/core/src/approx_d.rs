//! Near-linear estimation of the attention row sums: exact sums over the
//! heavy-entry mask plus a uniform sample over the complement, with optional
//! per-row capping and a sampled lower clamp.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mask::MaskSpec;
use crate::matrix::{dot, DiagonalEstimate, Matrix};
use crate::util::{checked_exp, mix_seed, OverflowSlot};

const TAU_STREAM: u64 = 0x7a75;
const IDX_STREAM: u64 = 0x1d5;
const ROW_STREAM: u64 = 0x0ff5e7;

/// Theoretical mode follows the estimator pseudocode literally (caps and the
/// `tau/kappa` clamp); practical mode shares one uniform index set across all
/// rows and drops both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorMode {
    Theoretical,
    Practical,
}

/// Parameters for the row-sum estimator.
#[derive(Debug, Clone, Copy)]
pub struct ApproxDParams {
    pub kappa: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub m: usize,
    pub cap_multiplier: f64,
    pub mode: EstimatorMode,
    pub shift: f64,
    pub seed: u64,
    /// Draw an independent index set per row instead of one shared set.
    pub fresh_rows: bool,
}

impl ApproxDParams {
    /// Validates `kappa > 0`, `epsilon > kappa^{-4}` and `alpha > epsilon^2 * kappa`.
    pub fn theoretical(kappa: f64, epsilon: f64, alpha: f64, m: usize, seed: u64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kappa must be positive and finite, got {kappa}"
            )));
        }
        if epsilon <= kappa.powi(-4) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must exceed kappa^-4 = {}, got {epsilon}",
                kappa.powi(-4)
            )));
        }
        if alpha <= epsilon * epsilon * kappa {
            return Err(Error::InvalidParameter(format!(
                "alpha must exceed epsilon^2 * kappa = {}, got {alpha}",
                epsilon * epsilon * kappa
            )));
        }
        if m == 0 {
            return Err(Error::InvalidParameter("m must be at least 1".into()));
        }
        Ok(Self {
            kappa,
            epsilon,
            alpha,
            m,
            cap_multiplier: 1.0,
            mode: EstimatorMode::Theoretical,
            shift: 0.0,
            seed,
            fresh_rows: false,
        })
    }

    /// Shared uniform indices, no caps, no lower clamp.
    pub fn practical(m: usize, seed: u64) -> Self {
        Self {
            kappa: f64::INFINITY,
            epsilon: 1.0,
            alpha: f64::INFINITY,
            m,
            cap_multiplier: 1.0,
            mode: EstimatorMode::Practical,
            shift: 0.0,
            seed,
            fresh_rows: false,
        }
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.shift = shift;
        self
    }

    pub fn with_cap_multiplier(mut self, c: f64) -> Self {
        self.cap_multiplier = c;
        self
    }

    pub fn with_fresh_rows(mut self, fresh: bool) -> Self {
        self.fresh_rows = fresh;
        self
    }
}

/// The estimator's intermediate quantities, kept for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct RowSumEstimate {
    /// Exact sum over mask entries per row.
    pub masked_part: Vec<f64>,
    /// Scaled uniform-sample estimate of the complement per row.
    pub unmasked_estimate: Vec<f64>,
    /// Sampled estimate of the maximum unmasked row sum (0 in practical mode).
    pub tau: f64,
    /// `masked_part[i] + max(unmasked_estimate[i], tau/kappa)`.
    pub final_values: Vec<f64>,
}

/// Exact row sums restricted to mask entries: `<M_i, exp(K q_i - shift)>`.
/// Block masks are evaluated block by block; sparse masks entry by entry.
/// Costs `O(d * nnz)`.
pub fn masked_row_sums(q: &Matrix, k: &Matrix, mask: &MaskSpec, shift: f64) -> Result<Vec<f64>> {
    let n = q.rows();
    if mask.rows() != n || mask.cols() != k.rows() {
        return Err(Error::Dimensions(format!(
            "mask is {}x{}, inputs have {} and {} rows",
            mask.rows(),
            mask.cols(),
            n,
            k.rows()
        )));
    }
    let mut sums = vec![0.0; n];
    let overflow = OverflowSlot::default();
    match mask {
        MaskSpec::BlockPerm {
            perm_q,
            perm_k,
            block_size,
        } => {
            let num_blocks = n.max(k.rows()).div_ceil(*block_size);
            let mut q_members = vec![Vec::new(); num_blocks];
            let mut k_members = vec![Vec::new(); num_blocks];
            for i in 0..n {
                q_members[perm_q[i] / block_size].push(i);
            }
            for j in 0..k.rows() {
                k_members[perm_k[j] / block_size].push(j);
            }
            let overflow = &overflow;
            let results: Vec<(usize, f64)> = (0..num_blocks)
                .into_par_iter()
                .flat_map_iter(|b| {
                    let ks = &k_members[b];
                    q_members[b].iter().map(move |&i| {
                        let qi = q.row(i);
                        let mut acc = 0.0;
                        for &j in ks {
                            match checked_exp(dot(qi, k.row(j)) - shift) {
                                Ok(e) => acc += e,
                                Err(arg) => overflow.record(i, j, arg),
                            }
                        }
                        (i, acc)
                    })
                })
                .collect();
            for (i, s) in results {
                sums[i] = s;
            }
        }
        MaskSpec::ExplicitSparse { .. } => {
            sums.par_iter_mut().enumerate().for_each(|(i, out)| {
                let qi = q.row(i);
                let mut acc = 0.0;
                for j in mask.row_entries(i) {
                    match checked_exp(dot(qi, k.row(j)) - shift) {
                        Ok(e) => acc += e,
                        Err(arg) => overflow.record(i, j, arg),
                    }
                }
                *out = acc;
            });
        }
    }
    overflow.finish()?;
    Ok(sums)
}

/// Max unmasked row sum over a uniform sample of `m` rows (drawn without
/// replacement). Each probed row costs a full `O(n d)` pass.
pub fn estimate_tau(
    q: &Matrix,
    k: &Matrix,
    mask: &MaskSpec,
    m: usize,
    shift: f64,
    seed: u64,
) -> Result<(f64, Vec<usize>)> {
    let n = q.rows();
    if m > n {
        return Err(Error::SampleTooLarge { m, n });
    }
    if m == 0 {
        return Err(Error::InvalidParameter(
            "tau sample must be nonempty".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample: Vec<usize> = rand::seq::index::sample(&mut rng, n, m).into_vec();
    let sums = unmasked_row_sums(q, k, mask, shift, &sample)?;
    let tau = sums.into_iter().fold(0.0f64, f64::max);
    Ok((tau, sample))
}

/// Full complement row sums `<1 - M_j, exp(K q_j - shift)>` for the given rows.
pub fn unmasked_row_sums(
    q: &Matrix,
    k: &Matrix,
    mask: &MaskSpec,
    shift: f64,
    rows: &[usize],
) -> Result<Vec<f64>> {
    let n = k.rows();
    let overflow = OverflowSlot::default();
    let sums: Vec<f64> = rows
        .par_iter()
        .map(|&i| {
            let qi = q.row(i);
            let mut total = 0.0;
            for j in 0..n {
                match checked_exp(dot(qi, k.row(j)) - shift) {
                    Ok(e) => total += e,
                    Err(arg) => overflow.record(i, j, arg),
                }
            }
            let mut masked = 0.0;
            for j in mask.row_entries(i) {
                match checked_exp(dot(qi, k.row(j)) - shift) {
                    Ok(e) => masked += e,
                    Err(arg) => overflow.record(i, j, arg),
                }
            }
            // Guard against cancellation leaving a tiny negative residue.
            (total - masked).max(0.0)
        })
        .collect();
    overflow.finish()?;
    Ok(sums)
}

/// Row-sum estimate as a ready-to-use diagonal.
pub fn approx_d(
    q: &Matrix,
    k: &Matrix,
    mask: &MaskSpec,
    params: &ApproxDParams,
) -> Result<DiagonalEstimate> {
    DiagonalEstimate::new(approx_d_estimate(q, k, mask, params)?.final_values)
}

/// Row-sum estimate with all intermediate quantities, drawing its own sample
/// indices from the parameter seed.
pub fn approx_d_estimate(
    q: &Matrix,
    k: &Matrix,
    mask: &MaskSpec,
    params: &ApproxDParams,
) -> Result<RowSumEstimate> {
    approx_d_impl(q, k, mask, params, None)
}

/// Row-sum estimate over caller-provided sample indices. This is how one
/// shared index set is reused between the diagonal estimate and the product
/// sampler, and it doubles as the deterministic hook for exactness tests
/// (identity indices with `m = n` reproduce the exact row sums).
pub fn approx_d_with_indices(
    q: &Matrix,
    k: &Matrix,
    mask: &MaskSpec,
    params: &ApproxDParams,
    indices: &[usize],
) -> Result<RowSumEstimate> {
    approx_d_impl(q, k, mask, params, Some(indices))
}

fn approx_d_impl(
    q: &Matrix,
    k: &Matrix,
    mask: &MaskSpec,
    params: &ApproxDParams,
    injected: Option<&[usize]>,
) -> Result<RowSumEstimate> {
    let n = q.rows();
    let n_cols = k.rows();
    if n == 0 || n_cols == 0 {
        return Err(Error::InvalidParameter("empty input".into()));
    }
    if params.m == 0 || params.m > n.min(n_cols) {
        return Err(Error::SampleTooLarge {
            m: params.m,
            n: n.min(n_cols),
        });
    }
    let shift = params.shift;
    let masked_part = masked_row_sums(q, k, mask, shift)?;

    let theoretical = params.mode == EstimatorMode::Theoretical;
    let tau = if theoretical {
        estimate_tau(
            q,
            k,
            mask,
            params.m,
            shift,
            mix_seed(params.seed, TAU_STREAM),
        )?
        .0
    } else {
        0.0
    };
    let clamp = if theoretical { tau / params.kappa } else { 0.0 };

    let shared: Option<Vec<usize>> = match injected {
        Some(idx) => {
            if let Some(&bad) = idx.iter().find(|&&i| i >= n_cols) {
                return Err(Error::InvalidParameter(format!(
                    "sample index {bad} out of range for n = {n_cols}"
                )));
            }
            Some(idx.to_vec())
        }
        None if !params.fresh_rows => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(params.seed, IDX_STREAM));
            Some((0..params.m).map(|_| rng.random_range(0..n_cols)).collect())
        }
        None => None,
    };

    let m_actual = shared.as_ref().map_or(params.m, Vec::len);
    let scale = n_cols as f64 / m_actual as f64;
    let log_n = (n_cols as f64).ln();
    let overflow = OverflowSlot::default();

    let unmasked_estimate: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let cap = if theoretical && n_cols >= 2 {
                params.cap_multiplier
                    * (params.epsilon * params.epsilon * m_actual as f64 / (n_cols as f64 * log_n))
                    * (masked_part[i] + clamp)
            } else {
                f64::INFINITY
            };
            let qi = q.row(i);
            let mut acc = 0.0;
            let fresh: Vec<usize>;
            let idx: &[usize] = match &shared {
                Some(s) => s,
                None => {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(mix_seed(params.seed, ROW_STREAM ^ i as u64));
                    fresh = (0..params.m).map(|_| rng.random_range(0..n_cols)).collect();
                    &fresh
                }
            };
            for &l in idx {
                if mask.contains(i, l) {
                    continue;
                }
                match checked_exp(dot(qi, k.row(l)) - shift) {
                    Ok(e) => acc += e.min(cap),
                    Err(arg) => overflow.record(i, l, arg),
                }
            }
            scale * acc
        })
        .collect();
    overflow.finish()?;

    let final_values = masked_part
        .iter()
        .zip(&unmasked_estimate)
        .map(|(&mp, &u)| mp + u.max(clamp))
        .collect();

    Ok(RowSumEstimate {
        masked_part,
        unmasked_estimate,
        tau,
        final_values,
    })
}

/// Diagnostic estimates of the mask condition number and the column
/// uniformity statistic.
#[derive(Debug, Clone, Copy)]
pub struct ConditionEstimate {
    /// Ratio of max to min unmasked row sums over the probe set. `+inf` when
    /// the minimum underflows to zero, NaN when the complement is empty.
    pub kappa: f64,
    /// `n * max-column squared norm` of the row-normalized attention matrix,
    /// maximized over the probed columns against exact row sums.
    pub alpha: f64,
}

impl ConditionEstimate {
    pub fn kappa_degenerate(&self) -> bool {
        !self.kappa.is_finite()
    }
}

/// Probes `kappa` on sampled rows and `alpha` on sampled columns. Quadratic
/// in `n`; intended as a desk-scale diagnostic.
pub fn estimate_kappa_alpha(
    q: &Matrix,
    k: &Matrix,
    mask: &MaskSpec,
    probes: usize,
    shift: f64,
    seed: u64,
) -> Result<ConditionEstimate> {
    let n = q.rows();
    if k.rows() != n {
        return Err(Error::Dimensions(
            "condition estimates require square attention".into(),
        ));
    }
    if probes == 0 || probes > n {
        return Err(Error::SampleTooLarge { m: probes, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xa1fa));
    let probe_rows: Vec<usize> = rand::seq::index::sample(&mut rng, n, probes).into_vec();
    let probe_cols: Vec<usize> = rand::seq::index::sample(&mut rng, n, probes).into_vec();

    let unmasked = unmasked_row_sums(q, k, mask, shift, &probe_rows)?;
    let max = unmasked.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = unmasked.iter().cloned().fold(f64::INFINITY, f64::min);
    let kappa = max / min;

    let alpha = alpha_over_columns(q, k, &probe_cols)? * n as f64;
    Ok(ConditionEstimate { kappa, alpha })
}

/// Max over the given columns of the squared column norm of the
/// row-normalized attention matrix, against exact row sums. Row-shift
/// stabilized (the normalized entries are invariant to per-row shifts).
pub(crate) fn alpha_over_columns(q: &Matrix, k: &Matrix, cols: &[usize]) -> Result<f64> {
    let n = q.rows();
    const CHUNK: usize = 128;
    let partials: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; cols.len()];
            let mut scores = vec![0.0; n];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let qi = q.row(i);
                let mut max = f64::NEG_INFINITY;
                for (j, s) in scores.iter_mut().enumerate() {
                    *s = dot(qi, k.row(j));
                    max = max.max(*s);
                }
                let mut denom = 0.0;
                for s in &scores {
                    denom += (s - max).exp();
                }
                for (a, &j) in acc.iter_mut().zip(cols) {
                    let p = (scores[j] - max).exp() / denom;
                    *a += p * p;
                }
            }
            acc
        })
        .collect();
    let mut totals = vec![0.0; cols.len()];
    for p in partials {
        for (t, x) in totals.iter_mut().zip(p) {
            *t += x;
        }
    }
    Ok(totals.into_iter().fold(0.0f64, f64::max))
}
