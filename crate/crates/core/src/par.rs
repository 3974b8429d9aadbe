//! Data-parallel helpers: rayon when the `parallel` feature is on, plain loops otherwise.
//!
//! Results always come back in input order, so output never depends on the
//! number of workers.

/// Worker count: `0` means "use every available core", `1` forces a sequential loop.
pub type Parallelism = usize;

/// Maps `f` over `items` with up to `parallelism` workers, preserving order.
#[cfg(feature = "parallel")]
pub fn map_ordered<T, R, F>(items: &[T], parallelism: Parallelism, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    if parallelism == 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    if parallelism == 0 {
        return items.par_iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(e) => {
            log::warn!("could not build a {parallelism}-thread pool ({e}); running sequentially");
            items.iter().map(f).collect()
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_ordered<T, R, F>(items: &[T], _parallelism: Parallelism, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Maps `f` over `0..n` on the global pool, preserving order.
#[cfg(feature = "parallel")]
pub fn map_range<R, F>(n: usize, parallel: bool, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    use rayon::prelude::*;
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<R, F>(n: usize, _parallel: bool, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Whether this build can run anything concurrently.
pub const fn enabled() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_at_any_width() {
        let items: Vec<u64> = (0..200).collect();
        let f = |x: &u64| x.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 7;
        let one = map_ordered(&items, 1, f);
        assert_eq!(one, map_ordered(&items, 4, f));
        assert_eq!(one, map_ordered(&items, 0, f));
        assert_eq!(map_range(50, true, |k| k * k), map_range(50, false, |k| k * k));
    }
}
