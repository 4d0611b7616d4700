//! Per-user data parallelism.
//!
//! With the `parallel` feature, work is spread over a rayon pool; `workers == 1`
//! or a build without the feature runs the same closures in order on the
//! calling thread. Results are always returned in input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// A worker pool sized once per run.
pub struct Executor {
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
    workers: usize,
}

impl Executor {
    /// `workers == 0` uses every available core.
    pub fn new(workers: usize) -> Self {
        #[cfg(feature = "parallel")]
        {
            let pool = (workers != 1).then(|| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .expect("thread pool construction")
            });
            let workers = pool.as_ref().map_or(1, |p| p.current_num_threads());
            Self { pool, workers }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = workers;
            Self { workers: 1 }
        }
    }

    pub fn sequential() -> Self {
        Self::new(1)
    }

    /// Threads actually used.
    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn is_parallel(&self) -> bool {
        self.workers > 1
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(|| items.par_iter().map(&f).collect());
        }
        items.iter().map(f).collect()
    }

    /// Consuming variant of [`Executor::map`].
    pub fn map_owned<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(|| items.into_par_iter().map(&f).collect());
        }
        items.into_iter().map(f).collect()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Self::new(0)
    }
}
