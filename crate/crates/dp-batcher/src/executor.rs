//! Multi-threaded per-example gradients.

use dp_batcher_core::engine::{Dataset, GradVector, GradientExecutor, Model};
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

use crate::error::{Error, Result};

/// Computes per-example gradients on a private rayon pool. Output order
/// matches the input indices, so results do not depend on the thread count.
pub struct Parallel {
    pool: ThreadPool,
}

impl Parallel {
    pub fn new(threads: usize) -> Result<Self> {
        let pool = ThreadPoolBuilder::new()
            .num_threads(threads)
            .thread_name(|i| format!("dp-grad-{i}"))
            .build()
            .map_err(|e| Error::Runtime(format!("cannot start worker threads: {e}")))?;
        Ok(Self { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl GradientExecutor for Parallel {
    fn per_example_grads(
        &self,
        model: &dyn Model,
        params: &[f64],
        data: &Dataset,
        indices: &[usize],
    ) -> Vec<GradVector> {
        self.pool.install(|| indices.par_iter().map(|&i| model.grad(params, data.example(i))).collect())
    }
}

/// Either executor, chosen at run time from a thread count.
pub enum Executor {
    Sequential,
    Parallel(Parallel),
}

impl Executor {
    /// One thread means the canonical sequential executor.
    pub fn with_threads(threads: usize) -> Result<Self> {
        match threads {
            0 => Err(Error::Runtime("thread count must be at least 1".into())),
            1 => Ok(Self::Sequential),
            n => Parallel::new(n).map(Self::Parallel),
        }
    }
}

impl GradientExecutor for Executor {
    fn per_example_grads(
        &self,
        model: &dyn Model,
        params: &[f64],
        data: &Dataset,
        indices: &[usize],
    ) -> Vec<GradVector> {
        match self {
            Self::Sequential => dp_batcher_core::engine::per_example_grads(model, params, data, indices),
            Self::Parallel(p) => p.per_example_grads(model, params, data, indices),
        }
    }
}
