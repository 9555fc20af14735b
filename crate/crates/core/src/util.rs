//! Small shared helpers: seed derivation and deterministic error capture
//! inside parallel loops.

use std::sync::Mutex;

use crate::error::{Error, Result, EXP_ARG_LIMIT};

/// Derives an independent stream seed from a base seed and a tag
/// (splitmix64 finalizer over the combined words).
pub fn mix_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Collects at most one overflow error from concurrent workers, keeping the
/// lexicographically smallest `(row, col)` so the reported entry does not
/// depend on scheduling.
#[derive(Default)]
pub(crate) struct OverflowSlot {
    slot: Mutex<Option<(usize, usize, f64)>>,
}

impl OverflowSlot {
    pub fn record(&self, row: usize, col: usize, arg: f64) {
        let mut guard = self.slot.lock().unwrap();
        let replace = match *guard {
            Some((r, c, _)) => (row, col) < (r, c),
            None => true,
        };
        if replace {
            *guard = Some((row, col, arg));
        }
    }

    pub fn finish(self) -> Result<()> {
        match self.slot.into_inner().unwrap() {
            Some((row, col, arg)) => Err(Error::ExpOverflow { row, col, arg }),
            None => Ok(()),
        }
    }
}

/// `exp(arg)` guarded by the overflow limit.
#[inline]
pub(crate) fn checked_exp(arg: f64) -> std::result::Result<f64, f64> {
    if arg > EXP_ARG_LIMIT {
        Err(arg)
    } else {
        Ok(arg.exp())
    }
}
