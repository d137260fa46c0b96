//! Joint CTC-attention training objective.

use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use crate::error::{config_err, shape_err, Error, Result};
use crate::numerics::kernels::{log_add, log_sum_exp};
use crate::numerics::{Graph, Real, Var};

/// Where the CTC branch reads its frames from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CtcTap {
    /// Bridge outputs `o`, so the memory gets gradients from both branches.
    #[default]
    Memory,
    /// Encoder outputs `h`.
    Encoder,
}

impl FromStr for CtcTap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "memory" => Ok(CtcTap::Memory),
            "encoder" => Ok(CtcTap::Encoder),
            other => Err(config_err!("unknown ctc tap {other:?}")),
        }
    }
}

impl CtcTap {
    pub fn as_str(self) -> &'static str {
        match self {
            CtcTap::Memory => "memory",
            CtcTap::Encoder => "encoder",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveConfig {
    /// λ in `λ·ctc + (1 − λ)·attention`.
    pub ctc_weight: f64,
    pub label_smoothing: f64,
    pub blank: usize,
    pub ctc_tap: CtcTap,
}

impl ObjectiveConfig {
    pub fn new(blank: usize) -> Self {
        ObjectiveConfig {
            ctc_weight: 0.3,
            label_smoothing: 0.1,
            blank,
            ctc_tap: CtcTap::Memory,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ctc_weight) {
            return Err(config_err!("ctc weight {} outside [0,1]", self.ctc_weight));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(config_err!(
                "label smoothing {} outside [0,1)",
                self.label_smoothing
            ));
        }
        Ok(())
    }
}

/// Mean per-position cross-entropy against `(1 − ε)·onehot + ε/V`.
pub fn attention_loss<T: Real>(
    g: &mut Graph<'_, T>,
    logits: Var,
    targets: &[usize],
    smoothing: f64,
) -> Result<Var> {
    let (rows, vocab) = g.value(logits).dims2();
    if rows != targets.len() || g.value(logits).rank() != 2 {
        return Err(shape_err!(
            "attention loss: logits {:?} for {} targets",
            g.shape(logits),
            targets.len()
        ));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= vocab) {
        return Err(shape_err!("target {bad} outside vocabulary of {vocab}"));
    }
    let eps = T::lit(smoothing);
    let uniform = eps / T::lit(vocab as f64);
    let inv_rows = T::one() / T::lit(rows as f64);
    let data = g.value(logits).data();
    let mut total = T::zero();
    let mut dx = vec![T::zero(); data.len()];
    for (r, &y) in targets.iter().enumerate() {
        let row = &data[r * vocab..(r + 1) * vocab];
        let lse = log_sum_exp(row);
        let drow = &mut dx[r * vocab..(r + 1) * vocab];
        for (v, (&z, d)) in row.iter().zip(drow.iter_mut()).enumerate() {
            let logp = z - lse;
            let q = if v == y {
                T::one() - eps + uniform
            } else {
                uniform
            };
            total -= q * logp;
            *d = (logp.exp() - q) * inv_rows;
        }
    }
    Ok(g.fused_scalar(logits, total * inv_rows, dx))
}

/// Frames needed to align `target`: one per label plus one blank between
/// every pair of equal neighbours.
pub fn ctc_min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Log-space forward and backward tables over the blank-interleaved target.
struct CtcLattice<T> {
    alpha: Vec<T>,
    beta: Vec<T>,
    log_prob: T,
    states: usize,
}

fn ctc_lattice<T: Real>(lp: &[T], frames: usize, classes: usize, ext: &[usize]) -> CtcLattice<T> {
    let s_len = ext.len();
    let ninf = T::neg_infinity();
    let mut alpha = vec![ninf; frames * s_len];
    let mut beta = vec![ninf; frames * s_len];
    let emit = |t: usize, s: usize| lp[t * classes + ext[s]];
    let can_skip = |s: usize| s >= 2 && ext[s] != ext[s - 2];

    alpha[0] = emit(0, 0);
    if s_len > 1 {
        alpha[1] = emit(0, 1);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if can_skip(s) {
                acc = log_add(acc, prev[s - 2]);
            }
            alpha[t * s_len + s] = if acc == ninf { ninf } else { acc + emit(t, s) };
        }
    }

    let last = frames - 1;
    beta[last * s_len + s_len - 1] = emit(last, s_len - 1);
    if s_len > 1 {
        beta[last * s_len + s_len - 2] = emit(last, s_len - 2);
    }
    for t in (0..last).rev() {
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut acc = next[s];
            if s + 1 < s_len {
                acc = log_add(acc, next[s + 1]);
            }
            if s + 2 < s_len && ext[s + 2] != ext[s] {
                acc = log_add(acc, next[s + 2]);
            }
            beta[t * s_len + s] = if acc == ninf { ninf } else { acc + emit(t, s) };
        }
    }

    let mut log_prob = alpha[last * s_len + s_len - 1];
    if s_len > 1 {
        log_prob = log_add(log_prob, alpha[last * s_len + s_len - 2]);
    }
    CtcLattice {
        alpha,
        beta,
        log_prob,
        states: s_len,
    }
}

fn extended_labels(target: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &y in target {
        ext.push(y);
        ext.push(blank);
    }
    ext
}

fn check_ctc(frames: usize, classes: usize, target: &[usize], blank: usize) -> Result<()> {
    if blank >= classes {
        return Err(shape_err!("blank {blank} outside {classes} classes"));
    }
    if let Some(&bad) = target.iter().find(|&&y| y >= classes || y == blank) {
        return Err(shape_err!("invalid CTC label {bad}"));
    }
    let required = ctc_min_frames(target).max(1);
    if frames < required {
        return Err(Error::InfeasibleAlignment { frames, required });
    }
    Ok(())
}

/// `−ln Σ_{alignments} Π_t p_t(π_t)` from per-frame log-probabilities
/// (rows must already be normalized).
pub fn ctc_nll_from_log_probs<T: Real>(
    log_probs: &[T],
    frames: usize,
    classes: usize,
    target: &[usize],
    blank: usize,
) -> Result<T> {
    if log_probs.len() != frames * classes {
        return Err(shape_err!("log-prob table has {} values", log_probs.len()));
    }
    check_ctc(frames, classes, target, blank)?;
    let ext = extended_labels(target, blank);
    Ok(-ctc_lattice(log_probs, frames, classes, &ext).log_prob)
}

/// CTC negative log-likelihood of `target` given unnormalized frame logits
/// `[T × classes]`; differentiable with respect to the logits.
pub fn ctc_loss<T: Real>(
    g: &mut Graph<'_, T>,
    logits: Var,
    target: &[usize],
    blank: usize,
) -> Result<Var> {
    let t = g.value(logits);
    if t.rank() != 2 {
        return Err(shape_err!("ctc logits must be [T, classes], got {:?}", t.shape()));
    }
    let (frames, classes) = t.dims2();
    check_ctc(frames, classes, target, blank)?;
    let mut lp = t.data().to_vec();
    for row in lp.chunks_mut(classes) {
        let lse = log_sum_exp(row);
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    let ext = extended_labels(target, blank);
    let lat = ctc_lattice(&lp, frames, classes, &ext);
    let s_len = lat.states;
    let mut dx: Vec<T> = lp.iter().map(|&v| v.exp()).collect();
    for tt in 0..frames {
        for (s, &label) in ext.iter().enumerate() {
            let a = lat.alpha[tt * s_len + s];
            let b = lat.beta[tt * s_len + s];
            if a == T::neg_infinity() || b == T::neg_infinity() {
                continue;
            }
            let occ = (a + b - lp[tt * classes + label] - lat.log_prob).exp();
            dx[tt * classes + label] -= occ;
        }
    }
    Ok(g.fused_scalar(logits, -lat.log_prob, dx))
}

/// `λ·ctc + (1 − λ)·att`
pub fn joint_loss<T: Real>(g: &mut Graph<'_, T>, att: Var, ctc: Var, lambda: f64) -> Result<Var> {
    let a = g.scale(att, T::lit(1.0 - lambda));
    let c = g.scale(ctc, T::lit(lambda));
    g.add(a, c)
}

/// Scalar form of [`joint_loss`].
pub fn joint_loss_value(att: f64, ctc: f64, lambda: f64) -> f64 {
    lambda * ctc + (1.0 - lambda) * att
}
