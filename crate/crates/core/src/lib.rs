//! Near-linear approximate attention on CPU.
//!
//! The fast path never materializes the `n x n` attention matrix: heavy
//! entries are located by sorted sign-projection hashing (or a count sketch),
//! row sums are estimated from the masked part plus a uniform sample of the
//! complement, and the value product is approximated by row-norm (or reused
//! uniform) sampling. Causal masking is handled by recursive block
//! decomposition. A dense quadratic oracle plus power-iteration norms back
//! the diagnostics that verify the spectral error bound at desk scale.
//!
//! ```
//! use hyperattn::*;
//!
//! let inputs = generate_inputs(Generator::Gaussian, 256, 8, 42)
//!     .with_scaled_q(1.0 / (8f64).sqrt());
//! let params = HyperParams::new(7).with_block_size(32).with_sample_count(64);
//! let mask = sort_lsh_mask(&inputs.q, &inputs.k, 32, &LshParams::new(8, 7)?)?;
//! let out = hyper_attention(&inputs, mask, &params)?;
//! assert_eq!((out.attention.rows(), out.attention.cols()), (256, 8));
//! # Ok::<(), hyperattn::Error>(())
//! ```

pub mod approx_d;
pub mod diagnostics;
pub mod error;
pub mod exact;
pub mod hyper;
pub mod io;
pub mod lsh;
pub mod mask;
pub mod matrix;
pub mod sampler;
pub mod sketch;
pub mod spectral;
pub mod synth;
pub mod timing;
mod util;

pub use approx_d::{
    approx_d, approx_d_estimate, approx_d_with_indices, estimate_kappa_alpha, estimate_tau,
    masked_row_sums, ApproxDParams, ConditionEstimate, EstimatorMode, RowSumEstimate,
};
pub use diagnostics::{
    alpha_statistic, alpha_sweep, verify_spectral, verify_spectral_causal,
    verify_spectral_with_cover, AlphaPoint, SpectralReport,
};
pub use error::{Error, Result, EXP_ARG_LIMIT};
pub use exact::{exact_attention, exact_attention_matrix, exact_row_sums};
pub use hyper::{
    causal_approx_d, causal_approx_d_with_stats, causal_hyper_attention,
    causal_hyper_attention_exact_offdiag, hyper_attention, hyper_attention_with_indices,
    CausalStats, DEstimator, HyperOutput, HyperParams, ShiftPolicy,
};
pub use lsh::{
    adjacent_bucket_probability, collision_probability, gray_code, gray_rank, sort_lsh_mask,
    LshHasher, LshParams,
};
pub use mask::MaskSpec;
pub use matrix::{AttentionInputs, DiagonalEstimate, Matrix};
pub use sampler::{apply_sampled_attention, build_sampler, sampled_product, RowNormSampler};
pub use sketch::{column_energy_estimates, sketch_heavy_mask, CountSketch, SketchParams};
pub use spectral::{operator_norm, stable_rank, SpectralEstimate};
pub use synth::{generate_inputs, planted_inputs, Generator};
pub use util::mix_seed;
