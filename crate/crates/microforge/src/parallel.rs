//! Order-preserving parallel map over slices, capped by `MICROFORGE_THREADS`.

use std::num::NonZeroUsize;
use std::thread;

pub const THREADS_ENV: &str = "MICROFORGE_THREADS";

/// Worker count: `MICROFORGE_THREADS` if set to a positive integer, else the
/// available parallelism.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| thread::available_parallelism().map_or(1, NonZeroUsize::get))
}

/// `items.iter().map(f).collect()`, spread over up to `threads` workers in
/// contiguous chunks. Results keep the input order, so the output does not
/// depend on the thread count.
pub fn map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    thread::scope(|s| {
        let handles: Vec<_> =
            items.chunks(chunk).map(|part| s.spawn(move || part.iter().map(f).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// [`map`] for fallible work; the first error in input order wins.
pub fn try_map<T, R, E, F>(items: &[T], threads: usize, f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync,
{
    map(items, threads, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_kept_for_any_thread_count() {
        let v: Vec<u64> = (0..37).collect();
        let want: Vec<u64> = v.iter().map(|x| x * x).collect();
        for t in [1, 2, 3, 8, 100] {
            assert_eq!(map(&v, t, |x| x * x), want);
        }
        assert!(map(&[] as &[u8], 4, |x| *x).is_empty());
        assert_eq!(try_map(&v, 3, |&x| if x == 5 || x == 30 { Err(x) } else { Ok(x) }), Err(5));
    }
}
