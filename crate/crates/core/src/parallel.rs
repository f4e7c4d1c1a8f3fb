//! Order-preserving data parallelism capped by `AVLOC_THREADS`.

pub const THREADS_ENV: &str = "AVLOC_THREADS";

/// Worker count from the environment; 1 when unset or unparsable.
pub fn threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or(1)
}

/// `items.iter().map(f)` spread over [`threads`] workers in contiguous
/// chunks. Output order matches input order; each item's result does not
/// depend on the worker count.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = threads().min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let v: Vec<u64> = (0..37).collect();
        assert_eq!(
            par_map(&v, |x| x * x),
            v.iter().map(|x| x * x).collect::<Vec<_>>()
        );
        assert!(par_map(&Vec::<u64>::new(), |x| *x).is_empty());
    }
}
