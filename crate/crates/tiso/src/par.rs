//! Thread pool sized by `TISO_THREADS` and order-preserving parallel maps.

use rayon::prelude::*;

use crate::error::{Result, TisoError};

pub const THREADS_VAR: &str = "TISO_THREADS";

/// Thread count from `TISO_THREADS`; unset or `0` lets rayon decide.
pub fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(0),
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .map_err(|_| TisoError::config(THREADS_VAR, format!("expected a thread count, got {s:?}"))),
    }
}

pub fn pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| TisoError::config(THREADS_VAR, e.to_string()))
}

/// Run `f` inside a pool sized from the environment.
pub fn install<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    Ok(pool()?.install(f))
}

/// Parallel map whose output is in input order regardless of scheduling.
pub fn map<T: Sync, R: Send>(items: &[T], f: impl Fn(usize, &T) -> R + Sync + Send) -> Vec<R> {
    items.par_iter().enumerate().map(|(k, t)| f(k, t)).collect()
}
