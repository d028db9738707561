//! Trial dispatch.
//!
//! Verifiers express a randomized suite as `n` independent trials indexed
//! `0..n`; a [`TrialRunner`] decides how they execute. Results always come
//! back in index order, so reports do not depend on the runner.

use alloc::vec::Vec;

pub trait TrialRunner: Sync {
    fn run<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs trials one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl TrialRunner for Sequential {
    fn run<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}
