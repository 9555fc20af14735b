//! Bit-exact binary matrix files and report serialization.
//!
//! Layout (all little-endian):
//!
//! | offset | size | field                     |
//! |--------|------|---------------------------|
//! | 0      | 4    | magic `"HATN"`            |
//! | 4      | 4    | version (`u32`, = 1)      |
//! | 8      | 1    | dtype (`0` f32, `1` f64)  |
//! | 9      | 3    | reserved, zero            |
//! | 12     | 8    | rows (`u64`)              |
//! | 20     | 8    | cols (`u64`)              |
//! | 28     | ...  | row-major values          |

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::diagnostics::{AlphaPoint, SpectralReport};
use crate::matrix::Matrix;
use crate::timing::BenchRecord;

pub const MAGIC: [u8; 4] = *b"HATN";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("reserved header bytes must be zero")]
    Reserved,
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("shape {rows}x{cols} overflows the payload size")]
    Oversize { rows: u64, cols: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Serializes a matrix to bytes. `F32` truncates with round-to-nearest-even.
pub fn encode_matrix(m: &Matrix, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.data().len() * dtype.width());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype.code());
    out.extend_from_slice(&[0u8; 3]);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    match dtype {
        Dtype::F32 => {
            for &v in m.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Dtype::F64 => {
            for &v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

/// Parses bytes produced by [`encode_matrix`], rejecting malformed headers
/// and non-finite payloads.
pub fn decode_matrix(bytes: &[u8]) -> Result<Matrix, FormatError> {
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::BadMagic);
    }
    if bytes[0..4] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(FormatError::Version(version));
    }
    let dtype = match bytes[8] {
        0 => Dtype::F32,
        1 => Dtype::F64,
        other => return Err(FormatError::UnknownDtype(other)),
    };
    if bytes[9..12] != [0, 0, 0] {
        return Err(FormatError::Reserved);
    }
    let rows = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let count = rows
        .checked_mul(cols)
        .filter(|&c| c <= (usize::MAX / 8) as u64)
        .ok_or(FormatError::Oversize { rows, cols })?;
    let expected = count * dtype.width() as u64;
    let found = (bytes.len() - HEADER_LEN) as u64;
    if found != expected {
        return Err(FormatError::Truncated { expected, found });
    }
    let payload = &bytes[HEADER_LEN..];
    let mut data = Vec::with_capacity(count as usize);
    match dtype {
        Dtype::F32 => {
            for chunk in payload.chunks_exact(4) {
                data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
            }
        }
        Dtype::F64 => {
            for chunk in payload.chunks_exact(8) {
                data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
        }
    }
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite(pos));
    }
    Matrix::new(rows as usize, cols as usize, data)
        .map_err(|_| FormatError::Oversize { rows, cols })
}

pub fn write_matrix(path: &Path, m: &Matrix, dtype: Dtype) -> Result<(), FormatError> {
    fs::write(path, encode_matrix(m, dtype))?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<Matrix, FormatError> {
    decode_matrix(&fs::read(path)?)
}

/// One JSON object per report.
pub fn report_json(report: &SpectralReport) -> String {
    serde_json::to_string_pretty(report).expect("report serialization")
}

pub fn alpha_csv(points: &[AlphaPoint]) -> String {
    let mut out = String::from("n,alpha,alpha_over_n\n");
    for p in points {
        out.push_str(&format!(
            "{},{:.12e},{:.12e}\n",
            p.n, p.alpha, p.alpha_over_n
        ));
    }
    out
}

pub fn bench_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from("n,variant,median_seconds\n");
    for r in records {
        out.push_str(&format!("{},{},{:.9}\n", r.n, r.variant, r.median_seconds));
    }
    out
}
