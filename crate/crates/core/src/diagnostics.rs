//! Spectral verification against the dense oracle, and the column-uniformity
//! sweep. Everything here is quadratic and meant for desk-scale checks.

use serde::Serialize;

use crate::approx_d::masked_row_sums;
use crate::error::Result;
use crate::exact::{exact_attention_matrix, exact_row_sums};
use crate::hyper::{
    causal_hyper_attention, hyper_attention, hyper_attention_with_indices, DEstimator, HyperOutput,
    HyperParams,
};
use crate::mask::MaskSpec;
use crate::matrix::{AttentionInputs, Matrix};
use crate::spectral::operator_norm;
use crate::synth::{generate_inputs, Generator};
use crate::util::mix_seed;

/// Power-iteration budget for report quantities. Reports compare errors
/// against bounds that differ by factors, so a 1e-5 relative tolerance is
/// plenty.
const REPORT_REL_TOL: f64 = 1e-5;
const REPORT_MAX_ITER: usize = 2_000;

/// One verification run: the measured spectral error, the bound it is held
/// against, and the instance statistics.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralReport {
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub causal: bool,
    pub mask: String,
    pub mode: String,
    pub block_size: usize,
    pub sample_count: usize,
    pub shift: f64,
    /// `||Att - approx||_op`.
    pub err_op: f64,
    /// `epsilon * ||D^{-1}A||_op * ||V||_op`.
    pub bound: f64,
    pub softmax_norm: f64,
    pub value_norm: f64,
    pub alpha_hat: f64,
    pub kappa_hat: f64,
    pub srank_hat: f64,
    pub passed: bool,
}

fn mode_name(params: &HyperParams) -> String {
    match params.estimator {
        DEstimator::Practical => "practical".into(),
        DEstimator::Theoretical { .. } => "theoretical".into(),
    }
}

fn mask_name(mask: &MaskSpec) -> String {
    match mask {
        MaskSpec::BlockPerm { block_size, .. } => format!("block(b={block_size})"),
        MaskSpec::ExplicitSparse { entries, .. } => format!("sparse(nnz={})", entries.len()),
    }
}

/// Runs the pipeline and measures it against the dense oracle.
pub fn verify_spectral(
    inputs: &AttentionInputs,
    mask: MaskSpec,
    params: &HyperParams,
    epsilon: f64,
) -> Result<SpectralReport> {
    verify_spectral_with_cover(inputs, mask, params, epsilon, None)
}

/// As [`verify_spectral`], optionally injecting explicit sample indices
/// (e.g. a complete cover, which makes the pipeline exact).
pub fn verify_spectral_with_cover(
    inputs: &AttentionInputs,
    mask: MaskSpec,
    params: &HyperParams,
    epsilon: f64,
    cover: Option<&[usize]>,
) -> Result<SpectralReport> {
    let mask_label = mask_name(&mask);
    let out = match cover {
        Some(idx) => hyper_attention_with_indices(inputs, mask.clone(), params, idx)?,
        None => hyper_attention(inputs, mask.clone(), params)?,
    };
    let shift = params.shift.resolve(&inputs.q, &inputs.k);
    measure(
        inputs,
        &out,
        Some(&mask),
        params,
        epsilon,
        shift,
        false,
        mask_label,
    )
}

/// Causal pipeline measured against the dense causal oracle.
pub fn verify_spectral_causal(
    inputs: &AttentionInputs,
    params: &HyperParams,
    epsilon: f64,
) -> Result<SpectralReport> {
    let out = causal_hyper_attention(inputs, params)?;
    let shift = params.shift.resolve(&inputs.q, &inputs.k);
    measure(
        inputs,
        &out,
        None,
        params,
        epsilon,
        shift,
        true,
        "causal".into(),
    )
}

#[allow(clippy::too_many_arguments)]
fn measure(
    inputs: &AttentionInputs,
    out: &HyperOutput,
    mask: Option<&MaskSpec>,
    params: &HyperParams,
    epsilon: f64,
    shift: f64,
    causal: bool,
    mask_label: String,
) -> Result<SpectralReport> {
    let n = inputs.n();
    let d = inputs.d();

    // Dense normalized attention at the shared shift; for the causal case the
    // strict upper triangle is zeroed before normalizing.
    let mut p = exact_attention_matrix(inputs, shift)?;
    if causal {
        for i in 0..n {
            for v in &mut p.row_mut(i)[i + 1..] {
                *v = 0.0;
            }
        }
    }
    let row_sums = exact_row_sums(&p)?;
    for i in 0..n {
        let inv = 1.0 / row_sums.get(i);
        for v in p.row_mut(i) {
            *v *= inv;
        }
    }

    let att_exact = p.matmul(&inputs.v);
    let err = att_exact.sub(&out.attention);
    let err_op = operator_norm(&err, REPORT_REL_TOL, REPORT_MAX_ITER, 11).value;
    let softmax_norm = operator_norm(&p, REPORT_REL_TOL, REPORT_MAX_ITER, 12).value;
    let value_norm = operator_norm(&inputs.v, REPORT_REL_TOL, REPORT_MAX_ITER, 13).value;
    let bound = epsilon * softmax_norm * value_norm;

    // Column-uniformity statistic from the normalized matrix.
    let mut alpha_hat = 0.0f64;
    for j in 0..n {
        let mut col = 0.0;
        for i in 0..n {
            let x = p.get(i, j);
            col += x * x;
        }
        alpha_hat = alpha_hat.max(col);
    }
    alpha_hat *= n as f64;

    // Mask condition number from exact row sums minus the exact masked part.
    let kappa_hat = match mask {
        Some(mask) => {
            let masked = masked_row_sums(&inputs.q, &inputs.k, mask, shift)?;
            let mut max = f64::NEG_INFINITY;
            let mut min = f64::INFINITY;
            for i in 0..n {
                let unmasked = (row_sums.get(i) - masked[i]).max(0.0);
                max = max.max(unmasked);
                min = min.min(unmasked);
            }
            max / min
        }
        None => f64::NAN,
    };

    // Stable rank of the estimator-normalized matrix: rescale rows of the
    // exact normalized matrix by `D_i / d~_i`.
    for i in 0..n {
        let f = row_sums.get(i) / out.d_tilde.get(i);
        for v in p.row_mut(i) {
            *v *= f;
        }
    }
    let frob = p.frobenius_norm();
    let top = operator_norm(&p, REPORT_REL_TOL, REPORT_MAX_ITER, 14).value;
    let srank_hat = if top > 0.0 { (frob / top).powi(2) } else { 0.0 };

    Ok(SpectralReport {
        n,
        d,
        seed: params.seed,
        epsilon,
        causal,
        mask: mask_label,
        mode: mode_name(params),
        block_size: params.block_size,
        sample_count: params.sample_count,
        shift,
        err_op,
        bound,
        softmax_norm,
        value_norm,
        alpha_hat,
        kappa_hat,
        srank_hat,
        passed: err_op <= bound,
    })
}

/// Dense column-uniformity statistic `n * max_j ||P e_j||^2` over columns
/// `skip_cols..n` of the row-normalized attention matrix.
pub fn alpha_statistic(q: &Matrix, k: &Matrix, skip_cols: usize) -> Result<f64> {
    let n = q.rows();
    let cols: Vec<usize> = (skip_cols..n).collect();
    if cols.is_empty() {
        return Err(crate::error::Error::InvalidParameter(
            "no columns left after prefix exclusion".into(),
        ));
    }
    Ok(crate::approx_d::alpha_over_columns(q, k, &cols)? * n as f64)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct AlphaPoint {
    pub n: usize,
    pub alpha: f64,
    pub alpha_over_n: f64,
}

/// Computes the column-uniformity trend over a grid of sequence lengths.
/// Inputs are regenerated per point from `(seed, n)`.
pub fn alpha_sweep(
    grid: &[usize],
    d: usize,
    gen: Generator,
    scale_q: bool,
    skip_cols: usize,
    seed: u64,
) -> Result<Vec<AlphaPoint>> {
    let mut points = Vec::with_capacity(grid.len());
    for &n in grid {
        let mut inputs = generate_inputs(gen, n, d, mix_seed(seed, n as u64));
        if scale_q {
            inputs = inputs.with_scaled_q(1.0 / (d as f64).sqrt());
        }
        let alpha = alpha_statistic(&inputs.q, &inputs.k, skip_cols)?;
        points.push(AlphaPoint {
            n,
            alpha,
            alpha_over_n: alpha / n as f64,
        });
    }
    Ok(points)
}
