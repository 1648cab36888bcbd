//! Sequential or rayon-backed execution of independent work items.
//!
//! Both modes return results in index order, so anything aggregated from
//! them is independent of scheduling.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Defaults to `Parallel` when the `parallel` feature is on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Execution {
    #[cfg_attr(not(feature = "parallel"), default)]
    Sequential,
    #[cfg(feature = "parallel")]
    #[default]
    Parallel,
}

impl Execution {
    pub fn map<T, F>(self, range: Range<usize>, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Execution::Sequential => range.map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => range.into_par_iter().map(f).collect(),
        }
    }
}

/// Runs `op` on a pool capped at `workers` threads (sequentially without the
/// `parallel` feature).
pub fn with_workers<T: Send>(workers: Option<usize>, op: impl FnOnce() -> T + Send) -> T {
    #[cfg(feature = "parallel")]
    if let Some(n) = workers {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
        {
            return pool.install(op);
        }
    }
    let _ = workers;
    op()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_in_order() {
        let seq = Execution::Sequential.map(0..100, |i| i * i);
        let def = Execution::default().map(0..100, |i| i * i);
        assert_eq!(seq, def);
        assert_eq!(
            with_workers(Some(2), || Execution::default().map(0..10, |i| i + 1)),
            (1..11).collect::<Vec<_>>()
        );
    }
}
