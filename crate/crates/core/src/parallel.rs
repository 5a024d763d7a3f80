//! Replication-level parallelism.
//!
//! Work is always indexed by replication number and collected in index
//! order, so results do not depend on how many workers ran them. Without the
//! `parallel` feature every path runs sequentially.

/// How replication loops are executed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "DPCPT_THREADS";

/// Resolves the worker count: `DPCPT_THREADS` beats `requested`, which beats
/// the number of available cores.
pub fn worker_count(requested: Option<usize>) -> usize {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0) {
        return n;
    }
    requested
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// `(0..n).map(f)` collected in index order.
pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Runs `op` on a pool of `workers` threads (sequential fallback without the
/// `parallel` feature or when the pool cannot be built).
pub fn with_workers<R, OP>(workers: usize, op: OP) -> R
where
    R: Send,
    OP: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
            return pool.install(op);
        }
    }
    let _ = workers;
    op()
}
