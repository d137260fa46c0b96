use alloc::vec::Vec;

use super::{EmissionVars, HeadEmissions, MemoryMatrix, NtmConfig, SharpenMode};
use crate::error::Result;
use crate::numerics::{Graph, Real, Tensor, Var, COSINE_DELTA};

/// The four stages of one head's addressing, as graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct AddressVars {
    pub content: Var,
    pub gated: Var,
    pub shifted: Var,
    pub weights: Var,
}

/// The four stages of one head's addressing, as values.
#[derive(Debug, Clone, PartialEq)]
pub struct AddressingWeights<T> {
    /// `w^c`, content weighting.
    pub content: Vec<T>,
    /// `w^g`, after interpolation with the previous weights.
    pub gated: Vec<T>,
    /// `w*`, after the circular shift.
    pub shifted: Vec<T>,
    /// `w`, after sharpening.
    pub weights: Vec<T>,
}

impl<T: Real> AddressingWeights<T> {
    pub fn stages(&self) -> [&[T]; 4] {
        [&self.content, &self.gated, &self.shifted, &self.weights]
    }
}

fn content_vars<T: Real>(g: &mut Graph<'_, T>, key: Var, beta: Var, mem: Var) -> Result<Var> {
    let sim = g.cosine_rows(key, mem, T::lit(COSINE_DELTA))?;
    let scaled = g.scale_by(sim, beta)?;
    g.softmax(scaled)
}

fn sharpen_vars<T: Real>(
    g: &mut Graph<'_, T>,
    w: Var,
    gamma: Var,
    mode: SharpenMode,
) -> Result<Var> {
    let powered = g.pow_by(w, gamma)?;
    match mode {
        SharpenMode::Softmax => g.softmax(powered),
        SharpenMode::Power => g.normalize(powered),
    }
}

/// content weighting → interpolation → circular shift → sharpening.
pub fn address_vars<T: Real>(
    g: &mut Graph<'_, T>,
    em: &EmissionVars,
    mem: Var,
    w_prev: Var,
    cfg: &NtmConfig,
) -> Result<AddressVars> {
    let content = content_vars(g, em.key, em.beta, mem)?;
    let gated = g.lerp(content, w_prev, em.gate)?;
    let shifted = g.circular_convolve(gated, em.shift, &cfg.shifts)?;
    let weights = sharpen_vars(g, shifted, em.gamma, cfg.sharpen)?;
    Ok(AddressVars {
        content,
        gated,
        shifted,
        weights,
    })
}

/// `softmax_i(β · K[k, M(i)])`
pub fn content_weights<T: Real>(key: &[T], beta: T, mem: &MemoryMatrix<T>) -> Result<Vec<T>> {
    let mut g = Graph::detached();
    let k = g.constant(Tensor::vector(key.to_vec()));
    let b = g.scalar(beta);
    let m = g.constant(mem.tensor().clone());
    let w = content_vars(&mut g, k, b, m)?;
    Ok(g.value(w).data().to_vec())
}

/// `g · w_c + (1 − g) · w_prev`
pub fn interpolate<T: Real>(content: &[T], prev: &[T], gate: T) -> Result<Vec<T>> {
    let mut g = Graph::detached();
    let a = g.constant(Tensor::vector(content.to_vec()));
    let b = g.constant(Tensor::vector(prev.to_vec()));
    let gv = g.scalar(gate);
    let w = g.lerp(a, b, gv)?;
    Ok(g.value(w).data().to_vec())
}

pub fn sharpen<T: Real>(w: &[T], gamma: T, mode: SharpenMode) -> Result<Vec<T>> {
    let mut g = Graph::detached();
    let wv = g.constant(Tensor::vector(w.to_vec()));
    let gv = g.scalar(gamma);
    let out = sharpen_vars(&mut g, wv, gv, mode)?;
    Ok(g.value(out).data().to_vec())
}

/// Full addressing of one head, returning every stage.
pub fn address<T: Real>(
    em: &HeadEmissions<T>,
    mem: &MemoryMatrix<T>,
    w_prev: &[T],
    cfg: &NtmConfig,
) -> Result<AddressingWeights<T>> {
    let mut g = Graph::detached();
    let ev = em.to_vars(&mut g);
    let m = g.constant(mem.tensor().clone());
    let p = g.constant(Tensor::vector(w_prev.to_vec()));
    let av = address_vars(&mut g, &ev, m, p, cfg)?;
    let v = |x: Var| g.value(x).data().to_vec();
    Ok(AddressingWeights {
        content: v(av.content),
        gated: v(av.gated),
        shifted: v(av.shifted),
        weights: v(av.weights),
    })
}
