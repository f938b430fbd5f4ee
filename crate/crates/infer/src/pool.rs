//! Parallel batch runner for independent forward solves.

use rayon::prelude::*;

use reentry_core::inference::BatchRunner;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "REENTRY_INFER_THREADS";

/// Runs jobs on a dedicated thread pool; results keep their index order, so
/// the output does not depend on the thread count.
pub struct ThreadPoolRunner {
    pool: rayon::ThreadPool,
}

impl ThreadPoolRunner {
    pub fn new(threads: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build().expect("thread pool starts");
        Self { pool }
    }

    /// Uses `REENTRY_INFER_THREADS` when set, otherwise all available cores.
    pub fn from_env() -> Self {
        let available = std::thread::available_parallelism().map_or(1, |n| n.get());
        let threads = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()).unwrap_or(available);
        Self::new(threads)
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl BatchRunner for ThreadPoolRunner {
    fn map<T: Send>(&self, n: usize, job: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
        self.pool.install(|| (0..n).into_par_iter().map(job).collect())
    }
}
