//! Execution-mode switch for the data-parallel paths.
//!
//! Every embarrassingly parallel loop in the crate (episode generation,
//! annotation, evaluation rollouts, sweep fan-out, matmul row blocks) is
//! expressed as an index-to-value map and dispatched through [`ExecMode`].
//! Results are always collected in index order, and each work item owns an
//! independently derived RNG stream, so sequential and parallel execution
//! are bit-identical.

use serde::{Deserialize, Serialize};

/// How to run data-parallel sections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    /// Single-threaded reference path. Always available.
    Sequential,
    /// Fan out over the rayon thread pool. Compiled in only with the
    /// `parallel` feature; without it this mode silently degrades to
    /// the sequential path.
    #[default]
    Parallel,
}

impl ExecMode {
    /// True when this mode will actually use multiple threads.
    pub fn is_parallel(self) -> bool {
        match self {
            ExecMode::Sequential => false,
            ExecMode::Parallel => cfg!(feature = "parallel"),
        }
    }
}

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indexed<T, F>(mode: ExecMode, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Fallible variant of [`map_indexed`]; returns the first error by index.
pub fn try_map_indexed<T, E, F>(mode: ExecMode, n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Apply `f` to disjoint contiguous chunks of `data`, in parallel when the
/// mode allows. `f` receives the chunk index and the chunk itself.
pub fn for_each_chunk_mut<T, F>(mode: ExecMode, data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(chunk_len > 0, "chunk_len must be positive");
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = mode;
    for (i, c) in data.chunks_mut(chunk_len).enumerate() {
        f(i, c);
    }
}
