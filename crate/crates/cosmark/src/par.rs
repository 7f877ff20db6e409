//! Data-parallel map helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) enabled, [`map_slice`] fans work out
//! over the rayon pool; without it, the call degrades to a plain iterator.
//! [`map_slice_seq`] is always sequential and always compiled, so the two
//! paths can be benchmarked against each other in one build. Both produce
//! results in input order, and every element is computed independently, so
//! outputs are bit-identical regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
pub(crate) fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
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

/// Sequential twin of [`map_slice`]; the benchmark baseline.
pub(crate) fn map_slice_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}
