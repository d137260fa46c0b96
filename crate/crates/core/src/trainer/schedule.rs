use crate::error::{domain_err, Result};

/// Linear warmup to `peak_lr` at `step = warmup`, inverse square-root decay after.
pub fn lr_at(step: u64, peak_lr: f64, warmup: u64) -> Result<f64> {
    if step == 0 {
        return Err(domain_err!("learning-rate schedule starts at step 1"));
    }
    if warmup == 0 {
        return Err(domain_err!("warmup must be at least one step"));
    }
    if step == warmup {
        return Ok(peak_lr);
    }
    let (s, w) = (step as f64, warmup as f64);
    let factor = if step < warmup { s / w } else { libm::sqrt(w / s) };
    Ok(peak_lr * factor)
}
