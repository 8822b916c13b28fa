//! Data-parallel helpers with a sequential fallback.
//!
//! Every batch loop in the crate goes through these helpers so the same code
//! path runs with or without the `parallel` feature. Floating-point
//! reductions are chunked with a fixed chunk size and the partial sums are
//! combined in index order, which keeps results bit-identical regardless of
//! the number of worker threads.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

const SUM_CHUNK: usize = 4096;

/// How a batch should be executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled, otherwise
    /// identical to `Sequential`.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Evaluates `f(0..count)` and returns the results in index order.
pub fn map_indexed<T, F>(exec: Execution, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..count).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..count).map(f).collect()
}

/// Deterministic sum of `f(0..count)`.
pub fn sum_indexed<F>(exec: Execution, count: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunks = count.div_ceil(SUM_CHUNK);
    let partial = |c: usize| {
        let start = c * SUM_CHUNK;
        let end = (start + SUM_CHUNK).min(count);
        (start..end).map(&f).sum::<f64>()
    };
    if chunks <= 1 {
        return partial(0);
    }
    map_indexed(exec, chunks, partial).into_iter().sum()
}
