//! Chunked data-parallel helpers.
//!
//! Work is split into fixed-size chunks whose boundaries never depend on the
//! number of threads, and results come back in chunk order. Callers reduce
//! the returned vector sequentially, which keeps floating-point sums
//! identical between the rayon path and the sequential fallback.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Split `0..len` into consecutive ranges of at most `chunk` elements.
pub fn chunk_ranges(len: usize, chunk: usize) -> Vec<Range<usize>> {
    let chunk = chunk.max(1);
    (0..len.div_ceil(chunk))
        .map(|i| i * chunk..((i + 1) * chunk).min(len))
        .collect()
}

/// Apply `f` to each chunk of `0..len`, returning results in chunk order.
pub fn map_chunks<R, F>(len: usize, chunk: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(Range<usize>) -> R + Sync + Send,
{
    let ranges = chunk_ranges(len, chunk);
    #[cfg(feature = "parallel")]
    {
        ranges.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ranges.into_iter().map(f).collect()
    }
}

/// Apply `f` to every item, returning results in input order.
pub fn map_items<T, R, F>(items: &[T], f: F) -> Vec<R>
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

/// Whether the crate was built with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
