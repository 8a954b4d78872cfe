//! Data-parallel map over independent work items.
//!
//! With the `parallel` feature the items go through rayon; without it, or when
//! callers ask for [`map_serial`], they run in order on the current thread.
//! Both paths return results in input order, and every item is computed by the
//! same floating-point code, so results are bitwise identical.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

pub fn map_serial<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Whether [`map`] actually fans out.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
