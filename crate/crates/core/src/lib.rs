//! Memory-augmented conformer encoder-decoder.
//!
//! A neural Turing machine memory sits between a conformer-style encoder and a
//! transformer decoder. Everything here is allocation-only (`no_std` + `alloc`):
//! the tensor tape, the memory addressing, the model, the joint CTC-attention
//! objective, synthetic tasks, scoring and the optimizer. File formats and the
//! command-line driver live in the companion `cntm` crate.

#![no_std]

extern crate alloc;

pub mod bridge;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod ntm;
pub mod numerics;
pub mod objective;
pub mod rng;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::{Gradients, Graph, ParamId, ParamStore, Real, Tensor, Var};
