//! Thread-count plumbing shared by the dense kernels, recovery and prediction.
//!
//! Every parallel region in the crate goes through these helpers. Work is
//! partitioned so that each output element is produced by exactly one task
//! with a fixed operation order, so results do not depend on the thread count.

use std::ops::Range;

/// Below this many flops a region runs on the calling thread.
const MIN_PARALLEL_WORK: usize = 1 << 16;

/// Run `f` inside a pool with `threads` workers (`0` means the ambient pool).
#[cfg(feature = "parallel")]
pub fn install<R, F>(threads: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    if threads == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn install<R, F>(_threads: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    f()
}

/// Number of workers available to the current region.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Apply `f(chunk_index, chunk)` to consecutive `chunk_len` slices of `data`.
/// `work` is a rough flop estimate used to decide whether to fan out.
pub fn for_each_chunk_mut<F>(data: &mut [f64], chunk_len: usize, work: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if chunk_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        if work >= MIN_PARALLEL_WORK && current_threads() > 1 {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    let _ = work;
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Order-preserving parallel map over an index range.
pub fn map_range<T, F>(range: Range<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if current_threads() > 1 && range.len() > 1 {
            use rayon::prelude::*;
            return range.into_par_iter().map(f).collect();
        }
    }
    range.map(f).collect()
}
