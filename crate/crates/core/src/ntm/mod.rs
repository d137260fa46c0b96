//! Neural Turing machine memory: head emissions, content + location
//! addressing, read, and erase/add write.
//!
//! Every operation exists at two levels. Graph-level functions take [`Var`]s
//! and record onto a tape so the memory can be trained through; value-level
//! functions take plain slices and are what tests and inspection tools call.

mod addressing;
mod heads;
mod memory;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

pub use addressing::{
    address, address_vars, content_weights, interpolate, sharpen, AddressVars,
    AddressingWeights,
};
pub use heads::{EmissionVars, HeadEmissions, HeadKind, HeadProjection};
pub use memory::{init_memory, read, write, HeadState, MemoryInit, MemoryMatrix};

use crate::error::{config_err, Error, Result};
#[allow(unused_imports)]
use crate::numerics::Var;

/// Final normalization of the addressing pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SharpenMode {
    /// `softmax(w*^γ)`.
    #[default]
    Softmax,
    /// `w*^γ / Σ w*^γ`, the original NTM sharpening.
    Power,
}

impl FromStr for SharpenMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(SharpenMode::Softmax),
            "power" => Ok(SharpenMode::Power),
            other => Err(config_err!("unknown sharpen mode {other:?}")),
        }
    }
}

impl SharpenMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SharpenMode::Softmax => "softmax",
            SharpenMode::Power => "power",
        }
    }
}

/// How memory contents and previous head weights start each sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitScheme {
    /// Every entry `1e-6`; previous weights one-hot at row 0.
    #[default]
    Constant,
    /// Trainable memory contents and trainable (softmax-normalized) previous weights.
    Learned,
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(InitScheme::Constant),
            "learned" => Ok(InitScheme::Learned),
            other => Err(config_err!("unknown memory init scheme {other:?}")),
        }
    }
}

impl InitScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            InitScheme::Constant => "constant",
            InitScheme::Learned => "learned",
        }
    }
}

/// Memory geometry and addressing options.
#[derive(Debug, Clone, PartialEq)]
pub struct NtmConfig {
    /// `N`, memory locations.
    pub rows: usize,
    /// `W`, width of each location.
    pub cols: usize,
    /// Allowed integer shifts of the location addressing.
    pub shifts: Vec<i64>,
    pub sharpen: SharpenMode,
    pub init: InitScheme,
    pub read_heads: usize,
    pub write_heads: usize,
}

impl NtmConfig {
    /// 256 × 10 memory.
    pub fn full() -> Self {
        NtmConfig {
            rows: 256,
            cols: 10,
            ..Self::toy()
        }
    }

    /// 32 × 8 memory for desk-scale experiments.
    pub fn toy() -> Self {
        NtmConfig {
            rows: 32,
            cols: 8,
            shifts: vec![-1, 0, 1],
            sharpen: SharpenMode::Softmax,
            init: InitScheme::Constant,
            read_heads: 1,
            write_heads: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 {
            return Err(config_err!("memory needs at least 2 rows, got {}", self.rows));
        }
        if self.cols < 1 {
            return Err(config_err!("memory needs at least 1 column"));
        }
        if self.shifts.is_empty() {
            return Err(config_err!("shift set is empty"));
        }
        let mut sorted = self.shifts.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.shifts.len() {
            return Err(config_err!("shift set has duplicates"));
        }
        if self.read_heads == 0 {
            return Err(config_err!("at least one read head is required"));
        }
        Ok(())
    }

    pub fn shifts_string(&self) -> String {
        let parts: Vec<String> = self.shifts.iter().map(|s| alloc::format!("{s}")).collect();
        parts.join(",")
    }
}

/// Parse a comma-separated shift set such as `-1,0,1`.
pub fn parse_shifts(s: &str) -> Result<Vec<i64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<i64>()
                .map_err(|_| config_err!("bad shift {p:?}"))
        })
        .collect()
}
