//! Kernel thread-pool sizing.

use std::sync::Once;

pub const THREADS_ENV: &str = "CMIX_THREADS";

static INIT: Once = Once::new();

/// Thread cap from `CMIX_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()?
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
}

/// Sizes the global rayon pool from `CMIX_THREADS`. Only the first call has
/// any effect, and only if no pool was built before it.
pub fn init_thread_pool() {
    INIT.call_once(|| {
        if let Some(n) = thread_cap() {
            // Fails only when a pool already exists; the cap is then moot.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    });
}

pub fn current_threads() -> usize {
    rayon::current_num_threads()
}
