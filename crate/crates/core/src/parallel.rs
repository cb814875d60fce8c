//! Worker pool sized by `GRIDFLOW_THREADS` (unset or 0: hardware parallelism).

pub(crate) fn worker_count() -> usize {
    std::env::var("GRIDFLOW_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Run `f` inside a pool of [`worker_count`] threads.
pub(crate) fn install<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(worker_count()).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
