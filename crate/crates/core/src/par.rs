//! Data-parallel map used for scenario batches, oracle seeds and random
//! property sweeps.
//!
//! With the `parallel` feature (on by default) [`map`] fans out over the rayon
//! thread pool; without it, [`map`] is the plain sequential iterator. The
//! sequential path is always available as [`map_sequential`] so benchmarks can
//! compare the two in a single build.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Applies `f` to every item, in parallel when the `parallel` feature is on.
/// Output order matches input order.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_sequential(items, f)
    }
}

pub fn map_sequential<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Maps `f` over `0..count`.
pub fn map_range<R, F>(count: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_in_order() {
        let items: Vec<u64> = (0..257).collect();
        let a = map(&items, |x| x * x + 1);
        let b = map_sequential(&items, |x| x * x + 1);
        assert_eq!(a, b);
        assert_eq!(map_range(5, |i| i * 2), vec![0, 2, 4, 6, 8]);
    }
}
