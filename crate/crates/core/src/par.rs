//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) `ExecMode::Parallel` fans work out on
//! the rayon pool; without it every mode runs sequentially. Results are always
//! returned in input order so callers stay deterministic.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// True when work will actually be distributed over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}

/// Map `f` over `items`, preserving order.
pub fn map<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Map over `0..n`, preserving order.
pub fn map_range<R, F>(mode: ExecMode, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Run two closures, concurrently when the mode allows.
pub fn join<A, B, RA, RB>(mode: ExecMode, a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return rayon::join(a, b);
    }
    let _ = mode;
    (a(), b())
}
