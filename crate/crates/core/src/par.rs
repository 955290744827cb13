//! Data-parallel helpers.
//!
//! Every batch loop in the crate goes through these functions so the same
//! code path runs on a rayon pool (feature `parallel`, on by default) or
//! sequentially. [`Execution::Sequential`] forces the serial path at runtime,
//! which is what the benches compare against.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Runtime execution mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when work will actually be spread across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Map `f` over `items`, preserving order.
pub fn map<T, R, F>(mode: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Map `f` over `0..n`, preserving order.
pub fn map_range<R, F>(mode: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Apply `f` to consecutive mutable chunks of `data` (chunk index, chunk).
pub fn for_each_chunk_mut<T, F>(mode: Execution, data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(chunk > 0, "chunk size must be positive");
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = mode;
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Map then reduce with an associative `combine`.
///
/// The parallel path uses rayon's tree reduction, so `combine` must be
/// associative up to floating-point reassociation.
pub fn map_reduce<T, A, M, C>(mode: Execution, items: &[T], identity: A, map: M, combine: C) -> A
where
    T: Sync,
    A: Send + Sync + Clone,
    M: Fn(&T) -> A + Sync + Send,
    C: Fn(A, A) -> A + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return items
            .par_iter()
            .map(map)
            .reduce(|| identity.clone(), &combine);
    }
    let _ = mode;
    items.iter().map(map).fold(identity, combine)
}

/// Run `f` inside a pool with `workers` threads (0 = rayon default).
///
/// Without the `parallel` feature this simply calls `f`.
pub fn with_workers<R: Send, F: FnOnce() -> R + Send>(workers: usize, f: F) -> R {
    #[cfg(feature = "parallel")]
    if workers > 0 {
        match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => return pool.install(f),
            Err(e) => log::warn!("could not build a {workers}-thread pool: {e}; using the global pool"),
        }
    }
    let _ = workers;
    f()
}
