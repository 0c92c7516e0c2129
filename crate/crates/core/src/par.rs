//! Data-parallel helpers.
//!
//! Every parallel loop in the crate goes through [`map_indexed`], which
//! returns results in index order regardless of how many threads ran it.
//! Without the `parallel` feature everything runs on the calling thread.

use serde::{Deserialize, Serialize};

/// How many worker threads a data-parallel loop may use.
///
/// `threads == 1` is sequential. `threads == 0` means "use the ambient
/// rayon pool" (all cores unless configured otherwise).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Parallelism {
    pub threads: usize,
}

impl Parallelism {
    pub const SEQUENTIAL: Parallelism = Parallelism { threads: 1 };
    pub const AUTO: Parallelism = Parallelism { threads: 0 };

    pub fn threads(threads: usize) -> Self {
        Parallelism { threads }
    }

    pub fn is_sequential(&self) -> bool {
        self.threads == 1 || !cfg!(feature = "parallel")
    }
}

impl Default for Parallelism {
    fn default() -> Self {
        Parallelism::AUTO
    }
}

/// Evaluates `f(0..n)` and collects the results in index order.
pub fn map_indexed<T, F>(n: usize, par: Parallelism, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if par.is_sequential() || n < 2 {
        return (0..n).map(f).collect();
    }
    parallel_map(n, par, f)
}

#[cfg(feature = "parallel")]
fn parallel_map<T, F>(n: usize, par: Parallelism, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;

    if par.threads == 0 {
        return (0..n).into_par_iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(par.threads).build() {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        Err(err) => {
            log::warn!("thread pool unavailable ({err}); running sequentially");
            (0..n).map(f).collect()
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, F>(n: usize, _par: Parallelism, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}
