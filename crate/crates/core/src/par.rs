//! Execution helpers for the data-parallel inner loops (seed sweeps and
//! Monte Carlo trials).
//!
//! With the `parallel` feature (default) the work fans out over rayon;
//! without it everything runs sequentially. Because every trial draws from
//! its own counter-based stream and results are collected in index order,
//! both paths produce bitwise-identical output.

/// Execution strategy for an indexed map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    /// Parallel when the `parallel` feature is enabled, sequential otherwise.
    Auto,
    /// Always sequential.
    Sequential,
}

/// Apply `f` to `0..n` and collect results in index order.
pub fn map_collect<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Exec::Auto => map_auto(n, f),
        Exec::Sequential => (0..n).map(f).collect(),
    }
}

#[cfg(feature = "parallel")]
fn map_auto<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_auto<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}
