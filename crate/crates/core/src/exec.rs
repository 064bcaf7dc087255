//! Data-parallel fan-out over independent work items.
//!
//! With the `parallel` feature (on by default) [`Execution::Parallel`] runs
//! items on a dedicated rayon pool; without it every execution is sequential.
//! Results always come back in item order, so output never depends on
//! scheduling.

use std::ops::Range;

/// Environment variable that overrides the worker count.
pub const WORKERS_ENV: &str = "ODFLOW_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// `workers == 0` means "decide from the environment".
    Parallel { workers: usize },
}

impl Execution {
    /// Parallel when the feature is compiled in, with the worker count from
    /// `ODFLOW_WORKERS`, then `configured`, then the available cores.
    pub fn from_env(configured: Option<usize>) -> Self {
        if !cfg!(feature = "parallel") {
            return Execution::Sequential;
        }
        Execution::Parallel { workers: resolve_workers(configured) }
    }

    /// Threads that will actually run items.
    pub fn workers(&self) -> usize {
        match *self {
            Execution::Sequential => 1,
            Execution::Parallel { .. } if !cfg!(feature = "parallel") => 1,
            Execution::Parallel { workers: 0 } => resolve_workers(None),
            Execution::Parallel { workers } => workers,
        }
    }
}

fn resolve_workers(configured: Option<usize>) -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&w| w > 0)
        .or(configured.filter(|&w| w > 0))
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// `(0..n).map(f)`, possibly in parallel.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let workers = exec.workers();
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    parallel::map_indexed(workers, n, f)
}

/// Splits `0..n` into `parts` contiguous, nearly equal ranges.
pub fn chunk_ranges(n: usize, parts: usize) -> Vec<Range<usize>> {
    let parts = parts.clamp(1, n.max(1));
    let base = n / parts;
    let extra = n % parts;
    let mut start = 0;
    (0..parts)
        .map(|k| {
            let len = base + usize::from(k < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Runs `f(state, range)` with each state owning one contiguous chunk of
/// `0..n`; states run concurrently when parallel. Results are concatenated
/// in item order.
pub fn map_chunks_with<S, T, F>(exec: Execution, states: &mut [S], n: usize, f: F) -> Vec<T>
where
    S: Send,
    T: Send,
    F: Fn(&mut S, Range<usize>) -> Vec<T> + Sync + Send,
{
    assert!(!states.is_empty(), "at least one worker state");
    let ranges = chunk_ranges(n, states.len());
    let states = &mut states[..ranges.len()];
    if exec.workers() <= 1 || states.len() == 1 {
        return states.iter_mut().zip(ranges).flat_map(|(s, r)| f(s, r)).collect();
    }
    parallel::map_chunks_with(exec.workers(), states, ranges, f)
}

#[cfg(feature = "parallel")]
mod parallel {
    use std::ops::Range;

    use rayon::prelude::*;

    fn pool(workers: usize) -> rayon::ThreadPool {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("odflow-worker-{i}"))
            .build()
            .expect("failed to start worker threads")
    }

    pub(super) fn map_indexed<T, F>(workers: usize, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        pool(workers).install(|| (0..n).into_par_iter().map(f).collect())
    }

    pub(super) fn map_chunks_with<S, T, F>(workers: usize, states: &mut [S], ranges: Vec<Range<usize>>, f: F) -> Vec<T>
    where
        S: Send,
        T: Send,
        F: Fn(&mut S, Range<usize>) -> Vec<T> + Sync + Send,
    {
        let parts: Vec<Vec<T>> = pool(workers.min(states.len()))
            .install(|| states.par_iter_mut().zip(ranges).map(|(s, r)| f(s, r)).collect());
        parts.into_iter().flatten().collect()
    }
}

#[cfg(not(feature = "parallel"))]
mod parallel {
    use std::ops::Range;

    pub(super) fn map_indexed<T, F>(_workers: usize, n: usize, f: F) -> Vec<T>
    where
        F: Fn(usize) -> T,
    {
        (0..n).map(f).collect()
    }

    pub(super) fn map_chunks_with<S, T, F>(_workers: usize, states: &mut [S], ranges: Vec<Range<usize>>, f: F) -> Vec<T>
    where
        F: Fn(&mut S, Range<usize>) -> Vec<T>,
    {
        states.iter_mut().zip(ranges).flat_map(|(s, r)| f(s, r)).collect()
    }
}
