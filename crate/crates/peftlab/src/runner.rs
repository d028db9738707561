use peftlab_core::TrialRunner;
use rayon::prelude::*;

/// Dispatches trials onto a dedicated rayon pool. Results are collected in
/// index order, so output does not depend on the number of workers.
pub struct RayonRunner {
    pool: rayon::ThreadPool,
}

impl RayonRunner {
    pub fn new(jobs: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
        Ok(Self { pool })
    }

    pub fn jobs(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl TrialRunner for RayonRunner {
    fn run<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_index_order() {
        let r = RayonRunner::new(4).unwrap();
        let out = r.run(1000, |i| i * 2);
        assert_eq!(out, (0..1000).map(|i| i * 2).collect::<Vec<_>>());
        assert_eq!(r.jobs(), 4);
    }
}
