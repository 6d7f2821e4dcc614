//! Worker pool shared by the batch-parallel kernels.
//!
//! `CS3D_THREADS` caps internal parallelism; unset or 0 falls back to the
//! rayon default. Parallel loops only ever split work into disjoint output
//! regions computed with a fixed serial reduction order, so results are
//! bitwise identical for every thread count.

use once_cell::sync::Lazy;
use rayon::ThreadPool;

static POOL: Lazy<ThreadPool> = Lazy::new(|| {
    let threads = std::env::var("CS3D_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("failed to build worker pool")
});

pub fn pool() -> &'static ThreadPool {
    &POOL
}

/// Runs `f` on each chunk of `out`, in parallel when the chunk count is
/// large enough to pay for the fan-out.
pub fn par_chunks<F>(out: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    debug_assert!(chunk > 0 && out.len() % chunk == 0);
    let n_chunks = out.len() / chunk;
    if n_chunks <= 1 || out.len() < 4096 {
        for (i, c) in out.chunks_mut(chunk).enumerate() {
            f(i, c);
        }
    } else {
        use rayon::prelude::*;
        pool().install(|| {
            out.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
        });
    }
}
