//! Order-preserving data-parallel helpers. Results come back in index order
//! whatever the worker count, so callers stay deterministic.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `(0..n).map(f)`, possibly spread over workers.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// `items.iter().enumerate().map(f)`, possibly spread over workers.
pub fn map_slice<'a, I, T, F>(items: &'a [I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn((usize, &'a I)) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().enumerate().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().enumerate().map(f).collect()
    }
}

/// Runs `f` on a dedicated pool of `threads` workers (0 = library default).
#[cfg(feature = "parallel")]
pub fn with_threads<T, F>(threads: usize, f: F) -> T
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<T, F>(_threads: usize, f: F) -> T
where
    F: FnOnce() -> T,
{
    f()
}
