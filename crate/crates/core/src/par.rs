// SPDX-License-Identifier: Apache-2.0

//! Data-parallel helpers used by the per-module loops.
//!
//! Every helper produces results in index order, so output is identical with
//! and without the `parallel` feature.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Environment variable capping worker threads (0 or unset = automatic).
pub const THREADS_ENV: &str = "DEEPSOM_THREADS";

/// Maps `f` over `0..n`, collecting in index order.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
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

/// Calls `f(i, &mut items[i])` for every element.
pub fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter_mut().enumerate().for_each(|(i, t)| f(i, t));
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter_mut().enumerate().for_each(|(i, t)| f(i, t));
    }
}

/// Fallible variant of [`for_each_mut`]; the error at the lowest index wins.
pub fn try_for_each_mut<T, E, F>(items: &mut [T], f: F) -> Result<(), E>
where
    T: Send,
    E: Send,
    F: Fn(usize, &mut T) -> Result<(), E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    let results: Vec<Result<(), E>> = items
        .par_iter_mut()
        .enumerate()
        .map(|(i, t)| f(i, t))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<(), E>> = items.iter_mut().enumerate().map(|(i, t)| f(i, t)).collect();
    results.into_iter().collect()
}

/// Fallible variant of [`map_indices`]; the error at the lowest index wins.
pub fn try_map_indices<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_indices(n, f).into_iter().collect()
}

/// Whether this build runs module loops on a thread pool.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Configures the global worker pool from `DEEPSOM_THREADS`.
///
/// Returns the number of worker threads in effect. Calling this more than
/// once is harmless; later calls report the existing pool size.
pub fn init_thread_pool() -> usize {
    let requested = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    #[cfg(feature = "parallel")]
    {
        if requested > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(requested)
                .build_global();
        }
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = requested;
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let v = map_indices(1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }

    #[test]
    fn try_map_reports_first_error() {
        let r: Result<Vec<usize>, usize> =
            try_map_indices(100, |i| if i % 7 == 3 { Err(i) } else { Ok(i) });
        assert_eq!(r, Err(3));
    }

    #[test]
    fn for_each_mut_visits_all() {
        let mut v = vec![0usize; 64];
        for_each_mut(&mut v, |i, x| *x = i + 1);
        assert_eq!(v.iter().sum::<usize>(), 64 * 65 / 2);
    }
}
