//! Order-preserving map that runs on rayon when the `parallel` feature is on
//! and the caller asks for it, and sequentially otherwise.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `true` when the crate was built with rayon support.
pub const AVAILABLE: bool = cfg!(feature = "parallel");

#[cfg(feature = "parallel")]
pub fn map<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if parallel {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, R, F>(items: &[T], _parallel: bool, f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}
