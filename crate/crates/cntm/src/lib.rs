//! File formats, run configuration and the command-line driver around
//! `cntm-core`.

pub mod commands;
pub mod config;
pub mod container;
pub mod corpus;
pub mod error;
pub mod metrics_log;
pub mod parallel;
pub mod report;

pub use config::RunConfig;
pub use error::{CliError, Result};
