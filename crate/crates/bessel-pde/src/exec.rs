//! Execution strategy for the data-parallel inner loops (kernel matrix rows,
//! quadrature sweeps, Monte Carlo path blocks).
//!
//! With the `parallel` feature (default) the work is spread over the rayon
//! pool; without it everything runs on the calling thread. Results are
//! bit-identical either way: each work item is computed independently and
//! collected in index order, and reductions fold the ordered results
//! serially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How data-parallel loops run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    /// Single-threaded reference path.
    Serial,
    /// Rayon work-stealing pool.
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Exec::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Exec::Serial
        }
    }
}

/// `(0..n).map(f)` collected in order.
pub(crate) fn map_indexed<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Exec::Serial => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
    }
}
