//! Replication scheduling.
//!
//! Replication `i` always draws from stream `i` and results are collected in
//! index order, so the output is identical whichever mode runs it.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    /// Rayon work-stealing over replications (sequential when the
    /// `parallel` feature is off).
    #[default]
    Parallel,
    Sequential,
}

/// Runs `f(0..n)` and returns the results in index order.
pub fn replicate<T, F>(n: usize, execution: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n as u64).into_par_iter().map(f).collect()
        }
        _ => (0..n as u64).map(f).collect(),
    }
}

/// Like [`replicate`] for fallible work; the first error in index order wins.
pub fn try_replicate<T, E, F>(n: usize, execution: Execution, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(u64) -> Result<T, E> + Sync + Send,
{
    replicate(n, execution, f).into_iter().collect()
}
