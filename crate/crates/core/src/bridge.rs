//! Memory bridge between encoder and decoder.
//!
//! For every encoder frame `h_t` each head emits its parameters through its
//! own feedforward layer; the write heads update memory, the read heads read
//! it, and `[h_t ; r_t]` is projected back to the model width. State is reset
//! at the start of each sequence.

use alloc::format;
use alloc::vec::Vec;
use core::str::FromStr;

use rand::Rng;

use crate::error::{config_err, domain_err, shape_err, Error, Result};
use crate::ntm::{
    address_vars, AddressVars, HeadKind, HeadProjection, HeadState, MemoryInit, MemoryMatrix,
    NtmConfig,
};
use crate::numerics::{Graph, ParamId, ParamStore, Real, Tensor, Var};

/// Whether the read within a timestep sees memory before or after the write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BridgeOrder {
    #[default]
    WriteFirst,
    ReadFirst,
}

impl FromStr for BridgeOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "write-first" => Ok(BridgeOrder::WriteFirst),
            "read-first" => Ok(BridgeOrder::ReadFirst),
            other => Err(config_err!("unknown bridge order {other:?}")),
        }
    }
}

impl BridgeOrder {
    pub fn as_str(self) -> &'static str {
        match self {
            BridgeOrder::WriteFirst => "write-first",
            BridgeOrder::ReadFirst => "read-first",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeConfig {
    pub d_model: usize,
    pub ntm: NtmConfig,
    pub order: BridgeOrder,
}

impl BridgeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 {
            return Err(config_err!("bridge d_model must be positive"));
        }
        self.ntm.validate()
    }
}

/// Recurrent memory state as graph nodes. Previous weights are ordered
/// write heads first, then read heads.
#[derive(Debug, Clone)]
pub struct BridgeStateVars {
    pub memory: Var,
    pub w_prev: Vec<Var>,
}

/// Recurrent memory state as values.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeState<T> {
    pub memory: MemoryMatrix<T>,
    pub head_states: Vec<HeadState<T>>,
}

/// Addressing stages recorded during one step.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub write: Vec<AddressVars>,
    pub read: Vec<AddressVars>,
}

#[derive(Debug, Clone)]
pub struct Bridge {
    cfg: BridgeConfig,
    write_heads: Vec<HeadProjection>,
    read_heads: Vec<HeadProjection>,
    init: MemoryInit,
    proj_weight: ParamId,
    proj_bias: ParamId,
}

impl Bridge {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: BridgeConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let write_heads = (0..cfg.ntm.write_heads)
            .map(|i| {
                HeadProjection::new(store, &format!("{name}.write{i}"), HeadKind::Write, d, &cfg.ntm, rng)
            })
            .collect();
        let read_heads = (0..cfg.ntm.read_heads)
            .map(|i| {
                HeadProjection::new(store, &format!("{name}.read{i}"), HeadKind::Read, d, &cfg.ntm, rng)
            })
            .collect();
        let heads = cfg.ntm.write_heads + cfg.ntm.read_heads;
        let init = MemoryInit::new(store, &format!("{name}.init"), &cfg.ntm, heads, rng);
        let concat = d + cfg.ntm.read_heads * cfg.ntm.cols;
        let proj_weight = store.add_xavier(format!("{name}.proj.weight"), concat, d, rng);
        let proj_bias = store.add(format!("{name}.proj.bias"), Tensor::zeros(&[d]));
        Ok(Bridge {
            cfg,
            write_heads,
            read_heads,
            init,
            proj_weight,
            proj_bias,
        })
    }

    pub fn config(&self) -> &BridgeConfig {
        &self.cfg
    }

    /// Output projection parameters `([d + R·W] × d, [d])`.
    pub fn projection(&self) -> (ParamId, ParamId) {
        (self.proj_weight, self.proj_bias)
    }

    pub fn init_state<T: Real>(&self, g: &mut Graph<'_, T>) -> Result<BridgeStateVars> {
        let (memory, w_prev) = self.init.init_vars(g)?;
        Ok(BridgeStateVars { memory, w_prev })
    }

    fn write_phase<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        mem: Var,
        h_t: Var,
        w_prev: &mut [Var],
        trace: &mut Vec<AddressVars>,
    ) -> Result<Var> {
        let mut mem = mem;
        for (i, head) in self.write_heads.iter().enumerate() {
            let em = head.emit(g, h_t)?;
            let av = address_vars(g, &em, mem, w_prev[i], &self.cfg.ntm)?;
            let (e, a) = (em.erase.expect("write head"), em.add.expect("write head"));
            mem = g.write_memory(mem, av.weights, e, a)?;
            w_prev[i] = av.weights;
            trace.push(av);
        }
        Ok(mem)
    }

    fn read_phase<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        mem: Var,
        h_t: Var,
        w_prev: &mut [Var],
        trace: &mut Vec<AddressVars>,
    ) -> Result<Vec<Var>> {
        let offset = self.write_heads.len();
        let mut reads = Vec::with_capacity(self.read_heads.len());
        for (i, head) in self.read_heads.iter().enumerate() {
            let em = head.emit(g, h_t)?;
            let av = address_vars(g, &em, mem, w_prev[offset + i], &self.cfg.ntm)?;
            reads.push(g.read_memory(mem, av.weights)?);
            w_prev[offset + i] = av.weights;
            trace.push(av);
        }
        Ok(reads)
    }

    /// One timestep: returns the next state, `o_t` (width `d_model`) and the
    /// addressing stages of every head.
    pub fn step<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        state: &BridgeStateVars,
        h_t: Var,
    ) -> Result<(BridgeStateVars, Var, StepTrace)> {
        if g.value(h_t).numel() != self.cfg.d_model || g.value(h_t).rank() != 1 {
            return Err(shape_err!(
                "bridge frame has shape {:?}, expected [{}]",
                g.shape(h_t),
                self.cfg.d_model
            ));
        }
        let mut w_prev = state.w_prev.clone();
        let mut trace = StepTrace {
            write: Vec::new(),
            read: Vec::new(),
        };
        let (mem, reads) = match self.cfg.order {
            BridgeOrder::WriteFirst => {
                let mem = self.write_phase(g, state.memory, h_t, &mut w_prev, &mut trace.write)?;
                let reads = self.read_phase(g, mem, h_t, &mut w_prev, &mut trace.read)?;
                (mem, reads)
            }
            BridgeOrder::ReadFirst => {
                let reads = self.read_phase(g, state.memory, h_t, &mut w_prev, &mut trace.read)?;
                let mem = self.write_phase(g, state.memory, h_t, &mut w_prev, &mut trace.write)?;
                (mem, reads)
            }
        };
        let mut parts = Vec::with_capacity(1 + reads.len());
        parts.push(h_t);
        parts.extend(reads);
        let joined = g.concat(&parts)?;
        let w = g.param(self.proj_weight);
        let b = g.param(self.proj_bias);
        let o = g.matmul(joined, w)?;
        let o = g.add_row(o, b)?;
        Ok((BridgeStateVars { memory: mem, w_prev }, o, trace))
    }

    /// Fold [`Bridge::step`] over the rows of `h[T × d_model]` from a fresh state.
    pub fn sequence<T: Real>(&self, g: &mut Graph<'_, T>, h: Var) -> Result<Var> {
        Ok(self.sequence_traced(g, h)?.0)
    }

    pub fn sequence_traced<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        h: Var,
    ) -> Result<(Var, Vec<StepTrace>)> {
        let shape = g.shape(h).to_vec();
        if shape.len() != 2 || shape[1] != self.cfg.d_model {
            return Err(shape_err!(
                "bridge input {:?}, expected [T, {}]",
                shape,
                self.cfg.d_model
            ));
        }
        if shape[0] == 0 {
            return Err(domain_err!("bridge needs at least one frame"));
        }
        let mut state = self.init_state(g)?;
        let mut outs = Vec::with_capacity(shape[0]);
        let mut traces = Vec::with_capacity(shape[0]);
        for t in 0..shape[0] {
            let h_t = g.row(h, t)?;
            let (next, o, trace) = self.step(g, &state, h_t)?;
            state = next;
            outs.push(o);
            traces.push(trace);
        }
        Ok((g.stack_rows(&outs)?, traces))
    }

    /// Fresh state as values.
    pub fn initial_state<T: Real>(&self, store: &ParamStore<T>) -> Result<BridgeState<T>> {
        let mut g = Graph::new(store);
        let s = self.init_state(&mut g)?;
        Ok(self.state_values(&g, &s)?)
    }

    fn state_values<T: Real>(&self, g: &Graph<'_, T>, s: &BridgeStateVars) -> Result<BridgeState<T>> {
        Ok(BridgeState {
            memory: MemoryMatrix::from_tensor(g.value(s.memory).clone())?,
            head_states: s
                .w_prev
                .iter()
                .map(|&w| HeadState {
                    w_prev: g.value(w).data().to_vec(),
                })
                .collect(),
        })
    }

    /// Value-level step: `(state, h_t) → (state', o_t)`.
    pub fn step_values<T: Real>(
        &self,
        store: &ParamStore<T>,
        state: &BridgeState<T>,
        h_t: &[T],
    ) -> Result<(BridgeState<T>, Vec<T>)> {
        let mut g = Graph::new(store);
        let sv = BridgeStateVars {
            memory: g.constant(state.memory.tensor().clone()),
            w_prev: state
                .head_states
                .iter()
                .map(|h| g.constant(Tensor::vector(h.w_prev.clone())))
                .collect(),
        };
        let h = g.constant(Tensor::vector(h_t.to_vec()));
        let (next, o, _) = self.step(&mut g, &sv, h)?;
        Ok((self.state_values(&g, &next)?, g.value(o).data().to_vec()))
    }
}
