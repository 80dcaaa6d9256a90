//! Ordered data-parallel helpers. Results never depend on the number of
//! worker threads: work is split into fixed-size chunks and partial results
//! are combined in chunk order.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    /// Runs on the rayon pool when the `parallel` feature is enabled and
    /// sequentially otherwise.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Trajectories per chunk in [`fold_chunks`].
pub const CHUNK: usize = 256;

/// `f(0), …, f(count − 1)` in index order.
pub fn map_ordered<T, F>(exec: Execution, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..count).into_par_iter().map(f).collect()
        }
        _ => (0..count).map(f).collect(),
    }
}

/// Fold `0..count` into an accumulator chunk by chunk, merging chunk
/// partials left to right.
pub fn fold_chunks<A, I, F, M>(exec: Execution, count: usize, init: I, fold: F, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, usize) + Sync + Send,
    M: Fn(&mut A, A),
{
    let chunks = count.div_ceil(CHUNK);
    let partials = map_ordered(exec, chunks, |c| {
        let mut acc = init();
        for i in c * CHUNK..((c + 1) * CHUNK).min(count) {
            fold(&mut acc, i);
        }
        acc
    });
    let mut total = init();
    for part in partials {
        merge(&mut total, part);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_map_matches_sequential() {
        let a = map_ordered(Execution::Parallel, 1000, |i| i * i);
        let b = map_ordered(Execution::Sequential, 1000, |i| i * i);
        assert_eq!(a, b);
    }

    #[test]
    fn chunked_fold_is_bitwise_stable() {
        let f = |exec| fold_chunks(exec, 5000, || 0.0_f64, |a, i| *a += 1.0 / (i as f64 + 1.0), |a, b| *a += b);
        assert_eq!(f(Execution::Parallel).to_bits(), f(Execution::Sequential).to_bits());
    }
}
