//! Order-preserving parallel map over an index range.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;

static MAX_THREADS: AtomicUsize = AtomicUsize::new(0);

/// Caps the worker count; `0` means one worker per available core.
pub fn set_max_threads(n: usize) {
    MAX_THREADS.store(n, Ordering::Relaxed);
}

pub fn max_threads() -> usize {
    match MAX_THREADS.load(Ordering::Relaxed) {
        0 => thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        n => n,
    }
}

/// `(0..n).map(f)` evaluated on contiguous chunks in parallel.
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = max_threads().min(n.max(1));
    if workers <= 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(workers);
    let f = &f;
    thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| s.spawn(move || (w * chunk..((w + 1) * chunk).min(n)).map(f).collect::<Vec<T>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order_for_any_worker_count() {
        let expected: Vec<usize> = (0..103).map(|i| i * i).collect();
        for w in [1, 2, 3, 8] {
            set_max_threads(w);
            assert_eq!(map_indexed(103, |i| i * i), expected);
        }
        set_max_threads(0);
        assert!(map_indexed(0, |i| i).is_empty());
    }
}
