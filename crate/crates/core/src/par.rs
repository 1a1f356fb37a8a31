//! Replica fan-out.
//!
//! With the `parallel` feature (default) replicas run on the current rayon
//! pool; without it they run in a plain loop. Either way the output vector is in
//! replica order and every reduction downstream is a sequential fold over it,
//! so results are bit-identical across worker counts and across the two
//! backends.

/// Evaluates `f(0), ..., f(n-1)` sequentially.
pub fn map_sequential<T, F>(n: u64, f: F) -> Vec<T>
where
    F: Fn(u64) -> T,
{
    (0..n).map(f).collect()
}

/// Evaluates `f(0), ..., f(n-1)` on the rayon pool.
#[cfg(feature = "parallel")]
pub fn map_parallel<T, F>(n: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Evaluates `f(0), ..., f(n-1)` with the default backend.
pub fn map_replicas<T, F>(n: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        map_parallel(n, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_sequential(n, f)
    }
}

/// Like [`map_replicas`] for fallible work; the first error in replica order wins.
pub fn try_map_replicas<T, E, F>(n: u64, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(u64) -> Result<T, E> + Sync + Send,
{
    map_replicas(n, f).into_iter().collect()
}

/// Number of worker threads the default backend will use.
pub fn current_workers() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Sizes the global worker pool. Has no effect without the `parallel` feature,
/// and fails if the pool was already built.
pub fn init_workers(n: usize) -> Result<(), String> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        Ok(())
    }
}
