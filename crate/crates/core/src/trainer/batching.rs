use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{config_err, Result};

/// Split `lengths` (in order) into `min(n, ⌈Σ lengths / bins⌉)` contiguous,
/// nonempty batches of roughly equal token totals.
pub fn token_batches(lengths: &[usize], bins: usize) -> Result<Vec<Range<usize>>> {
    if bins == 0 {
        return Err(config_err!("batch_bins must be positive"));
    }
    let n = lengths.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let total: usize = lengths.iter().sum();
    let count = total.div_ceil(bins).clamp(1, n);
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0usize);
    for &l in lengths {
        prefix.push(prefix.last().copied().unwrap_or(0) + l);
    }
    let mut out = Vec::with_capacity(count);
    let mut start = 0;
    for b in 1..count {
        // Leave at least one item for each remaining batch.
        let last = n - (count - b);
        let end = (start + 1..=last)
            .find(|&j| prefix[j] * count >= total * b)
            .unwrap_or(last);
        out.push(start..end);
        start = end;
    }
    out.push(start..n);
    Ok(out)
}
