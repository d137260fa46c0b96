use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::NtmConfig;
use crate::error::{shape_err, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Real, Tensor, Var};

/// Minimum key strength added after the softplus.
pub const BETA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Read,
    Write,
}

impl HeadKind {
    /// Width of the raw projection: `W+3+|shifts|` for reads, `3W+3+|shifts|` for writes.
    pub fn raw_size(self, cols: usize, n_shifts: usize) -> usize {
        match self {
            HeadKind::Read => cols + 3 + n_shifts,
            HeadKind::Write => 3 * cols + 3 + n_shifts,
        }
    }
}

/// Squashed head parameters as graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct EmissionVars {
    pub key: Var,
    pub beta: Var,
    pub gate: Var,
    pub shift: Var,
    pub gamma: Var,
    pub erase: Option<Var>,
    pub add: Option<Var>,
}

impl EmissionVars {
    /// Split and squash a raw projection:
    /// `[key | β | g | s | γ | e | a]`.
    pub fn from_raw<T: Real>(
        g: &mut Graph<'_, T>,
        raw: Var,
        kind: HeadKind,
        cols: usize,
        n_shifts: usize,
    ) -> Result<Self> {
        let expected = kind.raw_size(cols, n_shifts);
        if g.value(raw).numel() != expected {
            return Err(shape_err!(
                "head projection has {} values, expected {expected}",
                g.value(raw).numel()
            ));
        }
        let key = g.slice_cols(raw, 0, cols)?;
        let beta_raw = g.slice_cols(raw, cols, 1)?;
        let beta = g.softplus(beta_raw);
        let beta = g.add_scalar(beta, T::lit(BETA_FLOOR));
        let gate_raw = g.slice_cols(raw, cols + 1, 1)?;
        let gate = g.sigmoid(gate_raw);
        let shift_raw = g.slice_cols(raw, cols + 2, n_shifts)?;
        let shift = g.softmax(shift_raw)?;
        let gamma_raw = g.slice_cols(raw, cols + 2 + n_shifts, 1)?;
        let gamma = g.softplus(gamma_raw);
        let gamma = g.add_scalar(gamma, T::one());
        let (erase, add) = match kind {
            HeadKind::Read => (None, None),
            HeadKind::Write => {
                let base = cols + 3 + n_shifts;
                let e_raw = g.slice_cols(raw, base, cols)?;
                let a_raw = g.slice_cols(raw, base + cols, cols)?;
                (Some(g.sigmoid(e_raw)), Some(g.tanh(a_raw)))
            }
        };
        Ok(EmissionVars {
            key,
            beta,
            gate,
            shift,
            gamma,
            erase,
            add,
        })
    }

    pub fn values<T: Real>(&self, g: &Graph<'_, T>) -> HeadEmissions<T> {
        let v = |x: Var| g.value(x).data().to_vec();
        HeadEmissions {
            key: v(self.key),
            beta: g.value(self.beta).item(),
            gate: g.value(self.gate).item(),
            shift: v(self.shift),
            gamma: g.value(self.gamma).item(),
            erase: self.erase.map(v),
            add: self.add.map(v),
        }
    }
}

/// Head parameters as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadEmissions<T> {
    pub key: Vec<T>,
    /// Key strength, `> 0`.
    pub beta: T,
    /// Interpolation gate, in `(0, 1)`.
    pub gate: T,
    /// Distribution over the shift set.
    pub shift: Vec<T>,
    /// Sharpening exponent, `≥ 1`.
    pub gamma: T,
    pub erase: Option<Vec<T>>,
    pub add: Option<Vec<T>>,
}

impl<T: Real> HeadEmissions<T> {
    /// Squash a raw projection vector.
    pub fn from_raw(raw: &[T], kind: HeadKind, cols: usize, n_shifts: usize) -> Result<Self> {
        let mut g = Graph::detached();
        let r = g.constant(Tensor::vector(raw.to_vec()));
        let ev = EmissionVars::from_raw(&mut g, r, kind, cols, n_shifts)?;
        Ok(ev.values(&g))
    }

    /// Constant graph nodes holding these values.
    pub fn to_vars(&self, g: &mut Graph<'_, T>) -> EmissionVars {
        EmissionVars {
            key: g.constant(Tensor::vector(self.key.clone())),
            beta: g.scalar(self.beta),
            gate: g.scalar(self.gate),
            shift: g.constant(Tensor::vector(self.shift.clone())),
            gamma: g.scalar(self.gamma),
            erase: self.erase.clone().map(|e| g.constant(Tensor::vector(e))),
            add: self.add.clone().map(|a| g.constant(Tensor::vector(a))),
        }
    }

    /// Range constraints of every field; `Err` names the first violation.
    pub fn check_invariants(&self, tol: f64) -> core::result::Result<(), alloc::string::String> {
        if !(self.beta > T::zero()) {
            return Err(format!("beta = {} not positive", self.beta));
        }
        if !(self.gate > T::zero() && self.gate < T::one()) {
            return Err(format!("gate = {} outside (0,1)", self.gate));
        }
        if self.shift.iter().any(|&s| s < T::zero()) {
            return Err(format!("negative shift weight in {:?}", self.shift));
        }
        let total: f64 = self.shift.iter().map(|s| s.as_f64()).sum();
        if (total - 1.0).abs() > tol {
            return Err(format!("shift weights sum to {total}"));
        }
        if !(self.gamma >= T::one()) {
            return Err(format!("gamma = {} below 1", self.gamma));
        }
        if let Some(e) = &self.erase {
            if e.iter().any(|&v| !(v > T::zero() && v < T::one())) {
                return Err(format!("erase vector outside (0,1): {e:?}"));
            }
        }
        Ok(())
    }
}

/// Learned per-head feedforward layer from an encoder frame to raw head parameters.
#[derive(Debug, Clone)]
pub struct HeadProjection {
    pub kind: HeadKind,
    weight: ParamId,
    bias: ParamId,
    input_dim: usize,
    cols: usize,
    n_shifts: usize,
}

impl HeadProjection {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        kind: HeadKind,
        input_dim: usize,
        cfg: &NtmConfig,
        rng: &mut R,
    ) -> Self {
        let out = kind.raw_size(cfg.cols, cfg.shifts.len());
        let weight = store.add_xavier(format!("{name}.weight"), input_dim, out, rng);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out]));
        HeadProjection {
            kind,
            weight,
            bias,
            input_dim,
            cols: cfg.cols,
            n_shifts: cfg.shifts.len(),
        }
    }

    /// Emit this head's parameters from frame `h_t`.
    pub fn emit<T: Real>(&self, g: &mut Graph<'_, T>, h_t: Var) -> Result<EmissionVars> {
        if g.value(h_t).numel() != self.input_dim {
            return Err(shape_err!(
                "frame of {} values for a head expecting {}",
                g.value(h_t).numel(),
                self.input_dim
            ));
        }
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let raw = g.matmul(h_t, w)?;
        let raw = g.add_row(raw, b)?;
        EmissionVars::from_raw(g, raw, self.kind, self.cols, self.n_shifts)
    }
}
