//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) these run on the rayon global pool;
//! without it they fall back to plain sequential iteration. Every helper
//! returns results in input order, so callers get identical output either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map every element (with its index) and collect in input order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(usize, &T) -> R,
{
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Map over `0..n` and collect in order.
#[cfg(feature = "parallel")]
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Fold chunks of `items` into partial accumulators, then merge them.
///
/// `merge` must be associative; the partials are merged in chunk order.
#[cfg(feature = "parallel")]
pub fn fold_chunks<'a, T, A, I, F, M>(items: &'a [T], chunk: usize, init: I, fold: F, merge: M) -> A
where
    T: Sync,
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(A, &'a T) -> A + Sync + Send,
    M: Fn(A, A) -> A + Sync + Send,
{
    items
        .par_chunks(chunk.max(1))
        .map(|c| c.iter().fold(init(), &fold))
        .reduce(&init, &merge)
}

#[cfg(not(feature = "parallel"))]
pub fn fold_chunks<'a, T, A, I, F, M>(items: &'a [T], chunk: usize, init: I, fold: F, merge: M) -> A
where
    I: Fn() -> A,
    F: Fn(A, &'a T) -> A,
    M: Fn(A, A) -> A,
{
    items
        .chunks(chunk.max(1))
        .map(|c| c.iter().fold(init(), &fold))
        .fold(init(), merge)
}

/// Run `f` with at most `threads` worker threads. `None` uses the default pool.
#[cfg(feature = "parallel")]
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<R: Send>(_threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    f()
}

/// Whether this build was compiled with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let v: Vec<u32> = (0..10_000).collect();
        let out = map_indexed(&v, |i, x| (i as u32) * 2 + x);
        assert!(out.iter().enumerate().all(|(i, &y)| y == 3 * i as u32));
        assert_eq!(map_range(5, |i| i * i), vec![0, 1, 4, 9, 16]);
    }

    #[test]
    fn fold_matches_sequential_sum() {
        let v: Vec<u64> = (1..=1000).collect();
        let s = fold_chunks(&v, 7, || 0u64, |a, x| a + x, |a, b| a + b);
        assert_eq!(s, 500_500);
        let one = with_threads(Some(1), || {
            fold_chunks(&v, 3, || 0u64, |a, x| a + x, |a, b| a + b)
        });
        assert_eq!(one, s);
    }
}
