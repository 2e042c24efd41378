//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper returns results in input order so that callers folding the
//! output stay deterministic regardless of thread scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Whether a data-parallel section should fan out across threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    Sequential,
    #[default]
    Parallel,
}

impl Parallelism {
    /// True when work will actually be spread across a thread pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Parallel
    }
}

/// Map `f` over `0..n`, collecting in index order.
pub fn map_range<T, F>(mode: Parallelism, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Map `f` over a slice, collecting in slice order.
pub fn map_slice<S, T, F>(mode: Parallelism, items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Run `f` inside a pool limited to `jobs` threads (`None` keeps the global
/// pool). Without the `parallel` feature this just calls `f`.
pub fn with_jobs<R, F>(jobs: Option<usize>, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    if let Some(n) = jobs {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            return pool.install(f);
        }
    }
    let _ = jobs;
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_in_both_modes() {
        let seq = map_range(Parallelism::Sequential, 100, |i| i * i);
        let par = map_range(Parallelism::Parallel, 100, |i| i * i);
        assert_eq!(seq, par);
        let xs: Vec<f64> = (0..50).map(|i| i as f64).collect();
        assert_eq!(
            map_slice(Parallelism::Parallel, &xs, |x| x + 1.0),
            map_slice(Parallelism::Sequential, &xs, |x| x + 1.0)
        );
    }
}
