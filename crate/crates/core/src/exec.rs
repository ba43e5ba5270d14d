//! Execution-mode switch for the data-parallel inner loops.
//!
//! Dataset generation, corruption, and evaluation are embarrassingly parallel
//! across patients once every stochastic draw is keyed by `(seed, domain,
//! record index)` (see [`crate::rng`]). Results are collected in index order,
//! so the parallel path is bit-identical to the sequential one.
//!
//! With the `parallel` feature disabled, rayon is not compiled and every mode
//! degrades to the sequential loop.

/// How to run an index-parallel map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    /// Plain in-order loop.
    Sequential,
    /// Rayon work-stealing loop; output order is still index order.
    #[cfg(feature = "parallel")]
    #[default]
    Parallel,
    #[cfg(not(feature = "parallel"))]
    #[default]
    Auto,
}

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indexed<U, F>(mode: ExecMode, n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    match mode {
        ExecMode::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        #[cfg(not(feature = "parallel"))]
        ExecMode::Auto => (0..n).map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_preserves_order() {
        let v = map_indexed(ExecMode::Sequential, 5, |i| i * i);
        assert_eq!(v, vec![0, 1, 4, 9, 16]);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_matches_sequential() {
        let a = map_indexed(ExecMode::Sequential, 100, |i| i * 3 + 1);
        let b = map_indexed(ExecMode::Parallel, 100, |i| i * 3 + 1);
        assert_eq!(a, b);
    }
}
