//! Heavy-entry masks: block-diagonal-under-permutation (the sorted-hash
//! form) or an explicit sparse entry list (the sketch form).
//!
//! Masks are square in ordinary use; the block form also supports
//! rectangular shapes because the causal recursion applies it to
//! off-diagonal blocks whose sides differ by one when `n` is odd.

use crate::error::{Error, Result};

/// Which entries of the attention matrix count as "heavy" and are summed
/// exactly rather than sampled.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskSpec {
    /// Membership is `floor(perm_q[i]/b) == floor(perm_k[j]/b)`: after sorting
    /// rows and columns by hash bucket, the mask is block diagonal.
    BlockPerm {
        perm_q: Vec<usize>,
        perm_k: Vec<usize>,
        block_size: usize,
    },
    /// An explicit strictly sorted, deduplicated list of `(row, col)` pairs.
    ExplicitSparse {
        entries: Vec<(usize, usize)>,
        rows: usize,
        cols: usize,
    },
}

impl MaskSpec {
    /// Full mask: a single block covering everything.
    pub fn all_ones(n: usize) -> Self {
        MaskSpec::BlockPerm {
            perm_q: (0..n).collect(),
            perm_k: (0..n).collect(),
            block_size: n.max(1),
        }
    }

    /// Mask with no heavy entries at all.
    pub fn empty(n: usize) -> Self {
        MaskSpec::ExplicitSparse {
            entries: Vec::new(),
            rows: n,
            cols: n,
        }
    }

    pub fn block_perm(perm_q: Vec<usize>, perm_k: Vec<usize>, block_size: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::InvalidMask("block size must be at least 1".into()));
        }
        for perm in [&perm_q, &perm_k] {
            let n = perm.len();
            let mut seen = vec![false; n];
            for &p in perm {
                if p >= n || seen[p] {
                    return Err(Error::InvalidMask("not a bijection on [n]".into()));
                }
                seen[p] = true;
            }
        }
        Ok(MaskSpec::BlockPerm {
            perm_q,
            perm_k,
            block_size,
        })
    }

    /// Square explicit mask over `[n] x [n]`.
    pub fn explicit(entries: Vec<(usize, usize)>, n: usize) -> Result<Self> {
        for w in entries.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::InvalidMask(
                    "entries must be strictly sorted without duplicates".into(),
                ));
            }
        }
        if let Some(&(r, c)) = entries.iter().find(|&&(r, c)| r >= n || c >= n) {
            return Err(Error::InvalidMask(format!(
                "entry ({r}, {c}) outside [{n}]x[{n}]"
            )));
        }
        Ok(MaskSpec::ExplicitSparse {
            entries,
            rows: n,
            cols: n,
        })
    }

    pub fn rows(&self) -> usize {
        match self {
            MaskSpec::BlockPerm { perm_q, .. } => perm_q.len(),
            MaskSpec::ExplicitSparse { rows, .. } => *rows,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            MaskSpec::BlockPerm { perm_k, .. } => perm_k.len(),
            MaskSpec::ExplicitSparse { cols, .. } => *cols,
        }
    }

    /// Membership query `M_{i,j} == 1`.
    pub fn contains(&self, i: usize, j: usize) -> bool {
        match self {
            MaskSpec::BlockPerm {
                perm_q,
                perm_k,
                block_size,
            } => perm_q[i] / block_size == perm_k[j] / block_size,
            MaskSpec::ExplicitSparse { entries, .. } => entries.binary_search(&(i, j)).is_ok(),
        }
    }

    /// Number of nonzero mask entries.
    pub fn nnz(&self) -> usize {
        match self {
            MaskSpec::BlockPerm {
                perm_q,
                perm_k,
                block_size,
            } => {
                let num_blocks = perm_q.len().max(perm_k.len()).div_ceil(*block_size);
                // Width of each K block; the last one may be short.
                let mut widths = vec![0usize; num_blocks];
                for &p in perm_k {
                    widths[p / block_size] += 1;
                }
                perm_q.iter().map(|&p| widths[p / block_size]).sum()
            }
            MaskSpec::ExplicitSparse { entries, .. } => entries.len(),
        }
    }

    /// Mask-entry columns of a single row, in ascending order.
    pub fn row_entries(&self, i: usize) -> Vec<usize> {
        match self {
            MaskSpec::BlockPerm {
                perm_q,
                perm_k,
                block_size,
            } => {
                let block = perm_q[i] / block_size;
                (0..perm_k.len())
                    .filter(|&j| perm_k[j] / block_size == block)
                    .collect()
            }
            MaskSpec::ExplicitSparse { entries, .. } => {
                let start = entries.partition_point(|&(r, _)| r < i);
                let end = entries.partition_point(|&(r, _)| r <= i);
                entries[start..end].iter().map(|&(_, c)| c).collect()
            }
        }
    }
}
