//! Data-parallel helpers.
//!
//! With the `parallel` feature these fan out on the rayon global pool;
//! without it they run the same closures in order on the calling thread.
//! Every helper writes disjoint outputs, so results are bitwise identical
//! whichever backend is compiled in.

/// Below this many output elements a kernel stays on the calling thread.
#[cfg_attr(not(feature = "parallel"), allow(dead_code))]
const MIN_PARALLEL_LEN: usize = 1 << 14;

/// Calls `f(row_index, row)` for every `row_len`-sized chunk of `out`.
pub fn for_each_row<F>(out: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if row_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        if out.len() >= MIN_PARALLEL_LEN && rayon::current_num_threads() > 1 {
            use rayon::prelude::*;
            out.par_chunks_mut(row_len)
                .enumerate()
                .for_each(|(i, row)| f(i, row));
            return;
        }
    }
    for (i, row) in out.chunks_mut(row_len).enumerate() {
        f(i, row);
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Runs `f` with at most `threads` worker threads.
///
/// Timed sections use `with_threads(1, ..)` so measurements are not skewed
/// by scheduling noise.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
        {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

/// Number of threads the data-parallel helpers may use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Whether the crate was compiled with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_visited_once_in_place() {
        let mut out = vec![0.0; 3 * (MIN_PARALLEL_LEN / 2)];
        for_each_row(&mut out, 3, |i, row| {
            for (j, x) in row.iter_mut().enumerate() {
                *x = (i * 3 + j) as f64;
            }
        });
        assert!(out.iter().enumerate().all(|(k, &x)| x == k as f64));
    }

    #[test]
    fn map_keeps_order() {
        let v: Vec<usize> = (0..1000).collect();
        let sq = with_threads(2, || map(&v, |x| x * x));
        assert_eq!(sq, v.iter().map(|x| x * x).collect::<Vec<_>>());
    }
}
