//! Batch execution: rayon when the `parallel` feature is on, a plain loop
//! otherwise. Output order always follows input order.

/// How a batch of independent work items is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Sequential,
    /// Bounded worker pool. Falls back to sequential without the `parallel` feature.
    Parallel { threads: usize },
}

impl Execution {
    /// `1` means sequential; anything larger bounds the worker count.
    pub fn with_parallelism(n: usize) -> Self {
        if n <= 1 {
            Self::Sequential
        } else {
            Self::Parallel { threads: n }
        }
    }

    pub fn is_parallel(&self) -> bool {
        cfg!(feature = "parallel") && matches!(self, Self::Parallel { threads } if *threads > 1)
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map_ordered<T, R, F>(items: &[T], exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel { threads } if threads > 1 => parallel::map(items, threads, f),
        _ => items.iter().map(f).collect(),
    }
}

#[cfg(feature = "parallel")]
mod parallel {
    use rayon::prelude::*;

    pub(super) fn map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(e) => {
                tracing::warn!("could not build a {threads}-thread pool ({e}); running sequentially");
                items.iter().map(f).collect()
            }
        }
    }
}
