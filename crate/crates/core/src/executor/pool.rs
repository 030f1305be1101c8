/// Environment variable overriding the worker thread count.
pub const THREADS_ENV: &str = "SCHEDLIFT_THREADS";

/// Resolves the thread count: `SCHEDLIFT_THREADS` wins, then `requested`,
/// then the number of available cores.
pub fn resolve_threads(requested: Option<usize>) -> usize {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        return n;
    }
    requested.filter(|&n| n > 0).unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
}

#[cfg(feature = "parallel")]
pub(crate) fn with_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    use std::collections::HashMap;
    use std::sync::{Arc, Mutex, OnceLock};

    static POOLS: OnceLock<Mutex<HashMap<usize, Arc<rayon::ThreadPool>>>> = OnceLock::new();
    let pool = {
        let mut pools = POOLS.get_or_init(Default::default).lock().unwrap();
        Arc::clone(pools.entry(threads).or_insert_with(|| {
            Arc::new(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .thread_name(|i| format!("schedlift-{i}"))
                    .build()
                    .expect("failed to spawn worker threads"),
            )
        }))
    };
    pool.install(f)
}
