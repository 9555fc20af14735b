//! The end-to-end near-linear attention pipeline, and the recursive causal
//! decomposition: diagonal blocks recurse, the fully-unmasked lower-left
//! block is handled by the sampled row-sum estimator and the row sampler.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::approx_d::{approx_d_estimate, approx_d_with_indices, ApproxDParams, RowSumEstimate};
use crate::error::{Error, Result};
use crate::lsh::{sort_lsh_mask, LshParams};
use crate::mask::MaskSpec;
use crate::matrix::{dot, AttentionInputs, DiagonalEstimate, Matrix};
use crate::sampler::{apply_sampled_attention, build_sampler, sampled_product, RowNormSampler};
use crate::util::{checked_exp, mix_seed, OverflowSlot};

const SHARED_IDX_STREAM: u64 = 0x5a3d;
const D_STREAM: u64 = 0xd1a6;
const SAMPLER_STREAM: u64 = 0x5a9;
const CAUSAL_STREAM: u64 = 0xca05a1;
const NODE_LSH: u64 = 1;
const NODE_D: u64 = 2;
const NODE_IDX: u64 = 3;
const NODE_SAMPLER: u64 = 4;

/// How the global exponent shift is chosen. `Auto` uses the product of the
/// largest query and key row norms, which bounds every inner product and
/// keeps all exponent arguments nonpositive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShiftPolicy {
    Fixed(f64),
    Auto,
}

impl ShiftPolicy {
    pub fn resolve(&self, q: &Matrix, k: &Matrix) -> f64 {
        match self {
            ShiftPolicy::Fixed(s) => *s,
            ShiftPolicy::Auto => q.max_row_norm() * k.max_row_norm(),
        }
    }
}

/// Which row-sum estimator the pipeline runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DEstimator {
    /// Shared uniform indices, no caps, no lower clamp; the indices are
    /// reused by the product sampler.
    Practical,
    /// The literal capped estimator.
    Theoretical {
        kappa: f64,
        epsilon: f64,
        alpha: f64,
        cap_multiplier: f64,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct HyperParams {
    /// Mask block width `b`.
    pub block_size: usize,
    /// Sampled columns / value rows `m`.
    pub sample_count: usize,
    /// Hash bits; `None` picks `ceil(log2 n)` per call.
    pub lsh_bits: Option<u32>,
    pub estimator: DEstimator,
    /// Target spectral accuracy, echoed into reports.
    pub epsilon: f64,
    /// Causal recursion switches to the exact kernel at or below this size.
    pub causal_base_threshold: usize,
    pub shift: ShiftPolicy,
    pub seed: u64,
}

impl HyperParams {
    pub fn new(seed: u64) -> Self {
        Self {
            block_size: 256,
            sample_count: 256,
            lsh_bits: None,
            estimator: DEstimator::Practical,
            epsilon: 0.5,
            causal_base_threshold: 4096,
            shift: ShiftPolicy::Auto,
            seed,
        }
    }

    pub fn with_block_size(mut self, b: usize) -> Self {
        self.block_size = b;
        self
    }

    pub fn with_sample_count(mut self, m: usize) -> Self {
        self.sample_count = m;
        self
    }

    pub fn with_shift(mut self, shift: ShiftPolicy) -> Self {
        self.shift = shift;
        self
    }

    pub fn with_causal_base_threshold(mut self, t: usize) -> Self {
        self.causal_base_threshold = t;
        self
    }

    fn lsh_bits_for(&self, n: usize) -> u32 {
        self.lsh_bits.unwrap_or_else(|| ceil_log2(n)).clamp(1, 30)
    }

    fn d_params(&self, m: usize, shift: f64, seed: u64) -> Result<ApproxDParams> {
        match self.estimator {
            DEstimator::Practical => Ok(ApproxDParams::practical(m, seed).with_shift(shift)),
            DEstimator::Theoretical {
                kappa,
                epsilon,
                alpha,
                cap_multiplier,
            } => Ok(ApproxDParams::theoretical(kappa, epsilon, alpha, m, seed)?
                .with_shift(shift)
                .with_cap_multiplier(cap_multiplier)),
        }
    }
}

fn ceil_log2(n: usize) -> u32 {
    if n <= 2 {
        1
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// Everything a pipeline run produces. The sampler and mask are absent for
/// causal runs, where each recursion node builds its own.
#[derive(Debug, Clone)]
pub struct HyperOutput {
    pub d_tilde: DiagonalEstimate,
    pub sampler: Option<RowNormSampler>,
    pub attention: Matrix,
    pub mask_used: Option<MaskSpec>,
}

/// Runs the two-stage pipeline: estimate the diagonal against the mask, then
/// sample the value product. In practical mode one shared uniform index set
/// feeds both stages. Cost is `O(d n (b + m))` for block masks.
pub fn hyper_attention(
    inputs: &AttentionInputs,
    mask: MaskSpec,
    params: &HyperParams,
) -> Result<HyperOutput> {
    hyper_impl(inputs, mask, params, None)
}

/// Same pipeline with caller-provided sample indices for both stages; with
/// identity indices covering `[n]` this degenerates to the exact result.
pub fn hyper_attention_with_indices(
    inputs: &AttentionInputs,
    mask: MaskSpec,
    params: &HyperParams,
    indices: &[usize],
) -> Result<HyperOutput> {
    hyper_impl(inputs, mask, params, Some(indices))
}

fn hyper_impl(
    inputs: &AttentionInputs,
    mask: MaskSpec,
    params: &HyperParams,
    injected: Option<&[usize]>,
) -> Result<HyperOutput> {
    let n = inputs.n();
    let m = params.sample_count.min(n);
    if m == 0 {
        return Err(Error::InvalidParameter("sample count must be >= 1".into()));
    }
    let shift = params.shift.resolve(&inputs.q, &inputs.k);
    let dp = params.d_params(m, shift, mix_seed(params.seed, D_STREAM))?;
    let practical = matches!(params.estimator, DEstimator::Practical);

    let owned_indices: Option<Vec<usize>> = match injected {
        Some(_) => None,
        None if practical => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(params.seed, SHARED_IDX_STREAM));
            Some((0..m).map(|_| rng.random_range(0..n)).collect())
        }
        None => None,
    };
    let indices: Option<&[usize]> = injected.or(owned_indices.as_deref());

    let (est, sampler) = match indices {
        Some(idx) => {
            let est = approx_d_with_indices(&inputs.q, &inputs.k, &mask, &dp, idx)?;
            let sampler = build_sampler(&inputs.v, idx.len(), 0, Some(idx))?;
            (est, sampler)
        }
        None => {
            let est = approx_d_estimate(&inputs.q, &inputs.k, &mask, &dp)?;
            let sampler = build_sampler(&inputs.v, m, mix_seed(params.seed, SAMPLER_STREAM), None)?;
            (est, sampler)
        }
    };
    let d_tilde = DiagonalEstimate::new(est.final_values)?;
    let attention =
        apply_sampled_attention(&inputs.q, &inputs.k, &inputs.v, &d_tilde, &sampler, shift)?;
    Ok(HyperOutput {
        d_tilde,
        sampler: Some(sampler),
        attention,
        mask_used: Some(mask),
    })
}

/// Counts of recursion events, used to verify the decomposition shape.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CausalStats {
    /// Unmasked estimator calls on lower-left blocks.
    pub offdiag_calls: usize,
    /// Exact base-case evaluations.
    pub base_cases: usize,
}

impl CausalStats {
    fn merge(self, other: CausalStats) -> CausalStats {
        CausalStats {
            offdiag_calls: self.offdiag_calls + other.offdiag_calls,
            base_cases: self.base_cases + other.base_cases,
        }
    }
}

struct CausalCtx<'a> {
    params: &'a HyperParams,
    shift: f64,
    seed: u64,
    exact_offdiag: bool,
}

/// Recursive estimate of the causal row sums: exact below the base
/// threshold, otherwise two half-size causal calls plus one unmasked
/// estimate of the lower-left block.
pub fn causal_approx_d(q: &Matrix, k: &Matrix, params: &HyperParams) -> Result<DiagonalEstimate> {
    causal_approx_d_with_stats(q, k, params, false).map(|(d, _)| d)
}

/// As [`causal_approx_d`], with recursion statistics. `exact_offdiag`
/// replaces every off-diagonal estimate by the exact sum, which turns the
/// recursion into an algebraic identity for the dense causal row sums.
pub fn causal_approx_d_with_stats(
    q: &Matrix,
    k: &Matrix,
    params: &HyperParams,
    exact_offdiag: bool,
) -> Result<(DiagonalEstimate, CausalStats)> {
    check_square(q, k)?;
    let ctx = CausalCtx {
        params,
        shift: params.shift.resolve(q, k),
        seed: mix_seed(params.seed, CAUSAL_STREAM),
        exact_offdiag,
    };
    let (sums, stats) = causal_d_rec(q, k, 1, &ctx)?;
    Ok((DiagonalEstimate::new(sums)?, stats))
}

/// Causal attention through the same recursion: base blocks are computed
/// exactly, off-diagonal numerators are sampled on the corresponding value
/// slice, and the assembled rows are normalized by the recursive row sums.
pub fn causal_hyper_attention(
    inputs: &AttentionInputs,
    params: &HyperParams,
) -> Result<HyperOutput> {
    causal_hyper_impl(inputs, params, false)
}

/// Reference variant of [`causal_hyper_attention`] with exact off-diagonal
/// sums and products; the output matches dense causal attention up to
/// rounding.
pub fn causal_hyper_attention_exact_offdiag(
    inputs: &AttentionInputs,
    params: &HyperParams,
) -> Result<HyperOutput> {
    causal_hyper_impl(inputs, params, true)
}

fn causal_hyper_impl(
    inputs: &AttentionInputs,
    params: &HyperParams,
    exact_offdiag: bool,
) -> Result<HyperOutput> {
    let ctx = CausalCtx {
        params,
        shift: params.shift.resolve(&inputs.q, &inputs.k),
        seed: mix_seed(params.seed, CAUSAL_STREAM),
        exact_offdiag,
    };
    let (numer, sums, _) = causal_attn_rec(&inputs.q, &inputs.k, &inputs.v, 1, &ctx)?;
    let d_tilde = DiagonalEstimate::new(sums)?;
    let mut attention = numer;
    for i in 0..attention.rows() {
        let inv = 1.0 / d_tilde.get(i);
        for v in attention.row_mut(i) {
            *v *= inv;
        }
    }
    Ok(HyperOutput {
        d_tilde,
        sampler: None,
        attention,
        mask_used: None,
    })
}

fn check_square(q: &Matrix, k: &Matrix) -> Result<()> {
    if q.rows() != k.rows() || q.cols() != k.cols() {
        return Err(Error::Dimensions(format!(
            "causal attention needs equal shapes, got {}x{} and {}x{}",
            q.rows(),
            q.cols(),
            k.rows(),
            k.cols()
        )));
    }
    Ok(())
}

fn causal_d_rec(
    q: &Matrix,
    k: &Matrix,
    path: u64,
    ctx: &CausalCtx,
) -> Result<(Vec<f64>, CausalStats)> {
    let n = q.rows();
    if n <= ctx.params.causal_base_threshold.max(1) {
        let sums = causal_base(q, k, None, ctx.shift)?.0;
        return Ok((
            sums,
            CausalStats {
                offdiag_calls: 0,
                base_cases: 1,
            },
        ));
    }
    let n1 = n.div_ceil(2);
    let q1 = q.slice_rows(0, n1);
    let q2 = q.slice_rows(n1, n);
    let k1 = k.slice_rows(0, n1);
    let k2 = k.slice_rows(n1, n);
    let (top_res, bottom_res) = rayon::join(
        || causal_d_rec(&q1, &k1, path << 1, ctx),
        || causal_d_rec(&q2, &k2, (path << 1) | 1, ctx),
    );
    let (top, top_stats) = top_res?;
    let (bottom, bottom_stats) = bottom_res?;
    let (d21, _) = offdiag_estimates(&q2, &k1, None, path, ctx)?;

    let mut sums = top;
    sums.extend(d21.iter().zip(&bottom).map(|(a, b)| a + b));
    let stats = top_stats.merge(bottom_stats).merge(CausalStats {
        offdiag_calls: 1,
        base_cases: 0,
    });
    Ok((sums, stats))
}

fn causal_attn_rec(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    path: u64,
    ctx: &CausalCtx,
) -> Result<(Matrix, Vec<f64>, CausalStats)> {
    let n = q.rows();
    if n <= ctx.params.causal_base_threshold.max(1) {
        let (sums, numer) = causal_base(q, k, Some(v), ctx.shift)?;
        return Ok((
            numer.unwrap(),
            sums,
            CausalStats {
                offdiag_calls: 0,
                base_cases: 1,
            },
        ));
    }
    let n1 = n.div_ceil(2);
    let q1 = q.slice_rows(0, n1);
    let q2 = q.slice_rows(n1, n);
    let k1 = k.slice_rows(0, n1);
    let k2 = k.slice_rows(n1, n);
    let v1 = v.slice_rows(0, n1);
    let v2 = v.slice_rows(n1, n);
    let (top_res, bottom_res) = rayon::join(
        || causal_attn_rec(&q1, &k1, &v1, path << 1, ctx),
        || causal_attn_rec(&q2, &k2, &v2, (path << 1) | 1, ctx),
    );
    let (numer1, sums1, stats1) = top_res?;
    let (numer2, sums2, stats2) = bottom_res?;
    let (d21, prod21) = offdiag_estimates(&q2, &k1, Some(&v1), path, ctx)?;
    let prod21 = prod21.expect("off-diagonal product requested");

    let d_out = v.cols();
    let mut numer = Matrix::zeros(n, d_out);
    for i in 0..n1 {
        numer.row_mut(i).copy_from_slice(numer1.row(i));
    }
    for i in 0..(n - n1) {
        let dst = numer.row_mut(n1 + i);
        for (o, (&a, &b)) in dst.iter_mut().zip(prod21.row(i).iter().zip(numer2.row(i))) {
            *o = a + b;
        }
    }
    let mut sums = sums1;
    sums.extend(d21.iter().zip(&sums2).map(|(a, b)| a + b));
    let stats = stats1.merge(stats2).merge(CausalStats {
        offdiag_calls: 1,
        base_cases: 0,
    });
    Ok((numer, sums, stats))
}

/// Exact causal row sums (and optionally the numerator rows) of one base
/// block, at the shared global shift so sibling blocks combine coherently.
fn causal_base(
    q: &Matrix,
    k: &Matrix,
    v: Option<&Matrix>,
    shift: f64,
) -> Result<(Vec<f64>, Option<Matrix>)> {
    let n = q.rows();
    let overflow = OverflowSlot::default();
    match v {
        None => {
            let sums: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let qi = q.row(i);
                    let mut acc = 0.0;
                    for j in 0..=i.min(k.rows() - 1) {
                        match checked_exp(dot(qi, k.row(j)) - shift) {
                            Ok(e) => acc += e,
                            Err(arg) => overflow.record(i, j, arg),
                        }
                    }
                    acc
                })
                .collect();
            overflow.finish()?;
            Ok((sums, None))
        }
        Some(v) => {
            let d = v.cols();
            let mut numer = Matrix::zeros(n, d);
            let mut sums = vec![0.0; n];
            numer
                .data_mut()
                .par_chunks_mut(d.max(1))
                .zip(sums.par_iter_mut())
                .enumerate()
                .for_each(|(i, (row, sum))| {
                    let qi = q.row(i);
                    for j in 0..=i.min(k.rows() - 1) {
                        let e = match checked_exp(dot(qi, k.row(j)) - shift) {
                            Ok(e) => e,
                            Err(arg) => {
                                overflow.record(i, j, arg);
                                return;
                            }
                        };
                        *sum += e;
                        for (o, &x) in row.iter_mut().zip(v.row(j)) {
                            *o += e * x;
                        }
                    }
                });
            overflow.finish()?;
            Ok((sums, Some(numer)))
        }
    }
}

/// Row sums (and optionally the value product) of one fully-unmasked
/// lower-left block. The estimator path builds a per-node sorted-hash mask
/// and, in practical mode, shares one uniform index set between the row-sum
/// estimate and the product sampler on the corresponding value slice.
fn offdiag_estimates(
    q2: &Matrix,
    k1: &Matrix,
    v1: Option<&Matrix>,
    path: u64,
    ctx: &CausalCtx,
) -> Result<(Vec<f64>, Option<Matrix>)> {
    if ctx.exact_offdiag {
        return offdiag_exact(q2, k1, v1, ctx.shift);
    }
    let params = ctx.params;
    let node_seed = mix_seed(ctx.seed, path);
    let n_rows = q2.rows();
    let n_cols = k1.rows();
    let m = params.sample_count.min(n_rows).min(n_cols);
    let bits = params.lsh_bits_for(n_cols);
    let mask = sort_lsh_mask(
        q2,
        k1,
        params.block_size,
        &LshParams::new(bits, mix_seed(node_seed, NODE_LSH))?,
    )?;
    let dp = params.d_params(m, ctx.shift, mix_seed(node_seed, NODE_D))?;

    let practical = matches!(params.estimator, DEstimator::Practical);
    let est: RowSumEstimate;
    let mut product = None;
    if practical {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(node_seed, NODE_IDX));
        let indices: Vec<usize> = (0..m).map(|_| rng.random_range(0..n_cols)).collect();
        est = approx_d_with_indices(q2, k1, &mask, &dp, &indices)?;
        if let Some(v1) = v1 {
            product = Some(offdiag_product(q2, k1, v1, &indices, None, ctx.shift)?);
        }
    } else {
        est = approx_d_estimate(q2, k1, &mask, &dp)?;
        if let Some(v1) = v1 {
            let sampler = if v1.row_sq_norms().iter().sum::<f64>() > 0.0 {
                Some(build_sampler(
                    v1,
                    m,
                    mix_seed(node_seed, NODE_SAMPLER),
                    None,
                )?)
            } else {
                None
            };
            product = Some(match sampler {
                Some(s) => sampled_product(q2, k1, v1, &s, ctx.shift)?,
                None => Matrix::zeros(n_rows, v1.cols()),
            });
        }
    }
    Ok((est.final_values, product))
}

fn offdiag_product(
    q2: &Matrix,
    k1: &Matrix,
    v1: &Matrix,
    indices: &[usize],
    sampler: Option<RowNormSampler>,
    shift: f64,
) -> Result<Matrix> {
    let s = match sampler {
        Some(s) => s,
        None => {
            if v1.row_sq_norms().iter().sum::<f64>() <= 0.0 {
                return Ok(Matrix::zeros(q2.rows(), v1.cols()));
            }
            build_sampler(v1, indices.len(), 0, Some(indices))?
        }
    };
    sampled_product(q2, k1, v1, &s, shift)
}

fn offdiag_exact(
    q2: &Matrix,
    k1: &Matrix,
    v1: Option<&Matrix>,
    shift: f64,
) -> Result<(Vec<f64>, Option<Matrix>)> {
    let overflow = OverflowSlot::default();
    match v1 {
        None => {
            let sums: Vec<f64> = (0..q2.rows())
                .into_par_iter()
                .map(|i| {
                    let qi = q2.row(i);
                    let mut acc = 0.0;
                    for j in 0..k1.rows() {
                        match checked_exp(dot(qi, k1.row(j)) - shift) {
                            Ok(e) => acc += e,
                            Err(arg) => overflow.record(i, j, arg),
                        }
                    }
                    acc
                })
                .collect();
            overflow.finish()?;
            Ok((sums, None))
        }
        Some(v1) => {
            let d = v1.cols();
            let mut numer = Matrix::zeros(q2.rows(), d);
            let mut sums = vec![0.0; q2.rows()];
            numer
                .data_mut()
                .par_chunks_mut(d.max(1))
                .zip(sums.par_iter_mut())
                .enumerate()
                .for_each(|(i, (row, sum))| {
                    let qi = q2.row(i);
                    for j in 0..k1.rows() {
                        let e = match checked_exp(dot(qi, k1.row(j)) - shift) {
                            Ok(e) => e,
                            Err(arg) => {
                                overflow.record(i, j, arg);
                                return;
                            }
                        };
                        *sum += e;
                        for (o, &x) in row.iter_mut().zip(v1.row(j)) {
                            *o += e * x;
                        }
                    }
                });
            overflow.finish()?;
            Ok((sums, Some(numer)))
        }
    }
}
