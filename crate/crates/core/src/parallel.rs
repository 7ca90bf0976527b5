//! Data-parallel execution with a sequential fallback.
//!
//! With the `parallel` feature, [`Executor`] owns a dedicated rayon pool sized
//! to the caller's worker count. Without it, every map runs in order on the
//! calling thread. Outputs are always returned in input order, so results never
//! depend on which backend ran them.

use serde::{Deserialize, Serialize};

use crate::error::Result;
#[cfg(feature = "parallel")]
use crate::error::Error;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    #[default]
    Parallel,
    Sequential,
}

pub struct Executor {
    mode: ExecMode,
    threads: usize,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor")
            .field("mode", &self.effective_mode())
            .field("threads", &self.threads)
            .finish()
    }
}

impl Executor {
    /// Builds an executor with `threads` workers. `ExecMode::Parallel` silently
    /// degrades to sequential when the crate is built without `parallel`.
    pub fn new(mode: ExecMode, threads: usize) -> Result<Self> {
        let threads = threads.max(1);
        #[cfg(feature = "parallel")]
        {
            let pool = match mode {
                ExecMode::Parallel => Some(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(threads)
                        .thread_name(|i| format!("hmrl-worker-{i}"))
                        .build()
                        .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
                ),
                ExecMode::Sequential => None,
            };
            Ok(Self {
                mode,
                threads,
                pool,
            })
        }
        #[cfg(not(feature = "parallel"))]
        {
            Ok(Self { mode, threads })
        }
    }

    pub fn sequential() -> Self {
        Self::new(ExecMode::Sequential, 1).expect("sequential executor never fails")
    }

    pub fn effective_mode(&self) -> ExecMode {
        if cfg!(feature = "parallel") {
            self.mode
        } else {
            ExecMode::Sequential
        }
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    /// Applies `f` to every item, returning results in item order.
    pub fn map_mut<T, R, F>(&self, items: &mut [T], f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(&mut T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| items.par_iter_mut().map(&f).collect());
        }
        items.iter_mut().map(f).collect()
    }

    /// Read-only variant of [`Executor::map_mut`].
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| items.par_iter().map(&f).collect());
        }
        items.iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_keep_input_order() {
        for mode in [ExecMode::Parallel, ExecMode::Sequential] {
            let exec = Executor::new(mode, 4).unwrap();
            let mut items: Vec<u64> = (0..64).collect();
            let out = exec.map_mut(&mut items, |x| {
                *x += 1;
                *x * 3
            });
            assert_eq!(out, (1..=64).map(|x| x * 3).collect::<Vec<_>>());
            assert_eq!(exec.map(&items, |x| *x), (1..=64).collect::<Vec<_>>());
        }
    }
}
