//! Data-parallel helpers for Monte-Carlo batches and sweeps.
//!
//! With the `parallel` feature the work is spread over rayon's pool; without it
//! every call runs sequentially. Work items are indexed and seeded by index, so
//! both paths return identical results in identical order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// `Parallel` only when compiled with the `parallel` feature.
    pub fn effective(self) -> ExecMode {
        if cfg!(feature = "parallel") {
            self
        } else {
            ExecMode::Sequential
        }
    }
}

pub fn map_indexed<T, F>(mode: ExecMode, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode.effective() {
        ExecMode::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => (0..n).into_par_iter().map(f).collect(),
        #[cfg(not(feature = "parallel"))]
        ExecMode::Parallel => unreachable!(),
    }
}

pub fn map_slice<'a, I, T, F>(mode: ExecMode, items: &'a [I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&'a I) -> T + Sync + Send,
{
    match mode.effective() {
        ExecMode::Sequential => items.iter().map(f).collect(),
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => items.par_iter().map(f).collect(),
        #[cfg(not(feature = "parallel"))]
        ExecMode::Parallel => unreachable!(),
    }
}

/// Counts indices for which `pred` holds.
pub fn count_indexed<F>(mode: ExecMode, n: usize, pred: F) -> usize
where
    F: Fn(usize) -> bool + Sync + Send,
{
    match mode.effective() {
        ExecMode::Sequential => (0..n).filter(|i| pred(*i)).count(),
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => (0..n).into_par_iter().filter(|i| pred(*i)).count(),
        #[cfg(not(feature = "parallel"))]
        ExecMode::Parallel => unreachable!(),
    }
}
