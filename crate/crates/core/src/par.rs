//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) these dispatch to rayon; without it
//! they compile to plain loops. [`run_sequential`] forces the sequential path
//! at runtime on the calling thread, which is how the benches compare both
//! paths inside one binary.
//!
//! Every helper here only parallelizes loops whose iterations write disjoint
//! outputs, so results are identical for any worker count.

use std::cell::Cell;

thread_local! {
    static FORCE_SEQ: Cell<bool> = const { Cell::new(false) };
}

struct SeqGuard(bool);

impl Drop for SeqGuard {
    fn drop(&mut self) {
        let prev = self.0;
        FORCE_SEQ.with(|c| c.set(prev));
    }
}

/// Runs `f` with parallel dispatch disabled on this thread.
pub fn run_sequential<R>(f: impl FnOnce() -> R) -> R {
    let guard = SeqGuard(FORCE_SEQ.with(|c| c.replace(true)));
    let out = f();
    drop(guard);
    out
}

fn go_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQ.with(|c| c.get())
}

/// True when calls will actually fan out to worker threads.
pub fn parallelism_enabled() -> bool {
    go_parallel()
}

/// Caps the global worker pool. Call once, before any parallel work.
#[cfg(feature = "parallel")]
pub fn configure_workers(n: usize) -> Result<(), String> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

/// Without the `parallel` feature there is no pool to configure.
#[cfg(not(feature = "parallel"))]
pub fn configure_workers(_n: usize) -> Result<(), String> {
    Ok(())
}

/// `(0..n).map(f).collect()`, parallel when enabled. Output order is by
/// index, independent of scheduling.
pub fn map_collect<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync,
{
    #[cfg(feature = "parallel")]
    if go_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Applies `f(chunk_index, chunk)` over equally sized disjoint chunks.
/// `data.len()` must be a multiple of `chunk`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    debug_assert!(chunk > 0 && data.len() % chunk == 0);
    #[cfg(feature = "parallel")]
    if go_parallel() {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Zips two mutable chunk streams of the same chunk count; used where one
/// loop produces two buffers (values plus bookkeeping).
pub fn for_each_chunk_mut2<T, U, F>(a: &mut [T], chunk_a: usize, b: &mut [U], chunk_b: usize, f: F)
where
    T: Send,
    U: Send,
    F: Fn(usize, &mut [T], &mut [U]) + Sync,
{
    debug_assert!(chunk_a > 0 && a.len() % chunk_a == 0);
    debug_assert!(chunk_b > 0 && b.len() % chunk_b == 0);
    debug_assert_eq!(a.len() / chunk_a, b.len() / chunk_b);
    #[cfg(feature = "parallel")]
    if go_parallel() {
        use rayon::prelude::*;
        a.par_chunks_mut(chunk_a)
            .zip(b.par_chunks_mut(chunk_b))
            .enumerate()
            .for_each(|(i, (ca, cb))| f(i, ca, cb));
        return;
    }
    a.chunks_mut(chunk_a)
        .zip(b.chunks_mut(chunk_b))
        .enumerate()
        .for_each(|(i, (ca, cb))| f(i, ca, cb));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_collect_matches_sequential() {
        let par: Vec<usize> = map_collect(100, |i| i * i);
        let seq: Vec<usize> = run_sequential(|| map_collect(100, |i| i * i));
        assert_eq!(par, seq);
    }

    #[test]
    fn chunk_writes_are_ordered_by_index() {
        let mut data = vec![0u32; 64];
        for_each_chunk_mut(&mut data, 8, |i, c| {
            for (j, v) in c.iter_mut().enumerate() {
                *v = (i * 8 + j) as u32;
            }
        });
        let expect: Vec<u32> = (0..64).collect();
        assert_eq!(data, expect);
    }

    #[test]
    fn sequential_flag_restored_after_panic_free_run() {
        run_sequential(|| assert!(!parallelism_enabled()));
        assert_eq!(parallelism_enabled(), cfg!(feature = "parallel"));
    }
}
