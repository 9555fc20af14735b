use thiserror::Error;

/// Largest accepted argument to `exp`. Anything above this is reported as an
/// overflow together with the entry that produced it; the usual fix is to
/// rerun with a larger global shift.
pub const EXP_ARG_LIMIT: f64 = 700.0;

/// Errors from matrix construction and the attention estimators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("data length {len} does not match {rows}x{cols}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("exp overflow at ({row}, {col}): argument {arg:.3e} exceeds {limit}; raise the shift", limit = EXP_ARG_LIMIT)]
    ExpOverflow { row: usize, col: usize, arg: f64 },
    #[error("row sum at row {row} is not strictly positive")]
    NonPositiveRowSum { row: usize },
    #[error("sample count {m} exceeds population size {n}")]
    SampleTooLarge { m: usize, n: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("value matrix has no nonzero row")]
    ZeroValueMatrix,
    #[error("invalid mask: {0}")]
    InvalidMask(String),
}

pub type Result<T> = std::result::Result<T, Error>;
