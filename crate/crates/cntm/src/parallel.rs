use cntm_core::trainer::Executor;
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

use crate::error::{CliError, Result};

/// Runs jobs on a dedicated rayon pool. Results come back in input order,
/// so reductions over them are as deterministic as with `Serial`.
pub struct Pool {
    pool: ThreadPool,
}

impl Pool {
    pub fn new(threads: usize) -> Result<Self> {
        let pool = ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
        Ok(Pool { pool })
    }
}

impl Executor for Pool {
    fn map<I, O, F>(&self, items: &[I], f: F) -> Vec<O>
    where
        I: Sync,
        O: Send,
        F: Fn(&I) -> O + Sync + Send,
    {
        self.pool.install(|| items.par_iter().map(f).collect())
    }
}
