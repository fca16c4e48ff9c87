//! Process-wide execution settings: deterministic mode and the allocation
//! counter used for memory estimates.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Once;

static DETERMINISTIC: AtomicBool = AtomicBool::new(false);
static ENV_INIT: Once = Once::new();

static LIVE_BYTES: AtomicUsize = AtomicUsize::new(0);
static PEAK_BYTES: AtomicUsize = AtomicUsize::new(0);

fn init_from_env() {
    ENV_INIT.call_once(|| {
        if std::env::var("FAST_DETERMINISTIC").is_ok_and(|v| v == "1") {
            DETERMINISTIC.store(true, Ordering::SeqCst);
        }
    });
}

/// True when `FAST_DETERMINISTIC=1` or [`set_deterministic`] was called. In this
/// mode all kernels run serially.
pub fn deterministic() -> bool {
    init_from_env();
    DETERMINISTIC.load(Ordering::Relaxed)
}

pub fn set_deterministic(on: bool) {
    init_from_env();
    DETERMINISTIC.store(on, Ordering::SeqCst);
}

/// Runs `f` over disjoint mutable chunks, in parallel unless deterministic mode
/// is on. Chunks never share accumulators, so results do not depend on the
/// schedule.
pub fn for_each_chunk<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    use rayon::prelude::*;
    if chunk == 0 {
        return;
    }
    if deterministic() || data.len() <= chunk {
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    } else {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
}

pub(crate) fn track_alloc(bytes: usize) {
    let live = LIVE_BYTES.fetch_add(bytes, Ordering::Relaxed) + bytes;
    PEAK_BYTES.fetch_max(live, Ordering::Relaxed);
}

pub(crate) fn track_free(bytes: usize) {
    LIVE_BYTES.fetch_sub(bytes, Ordering::Relaxed);
}

/// Bytes currently held by live tapes.
pub fn live_bytes() -> usize {
    LIVE_BYTES.load(Ordering::Relaxed)
}

pub fn peak_bytes() -> usize {
    PEAK_BYTES.load(Ordering::Relaxed)
}

pub fn reset_peak() {
    PEAK_BYTES.store(LIVE_BYTES.load(Ordering::Relaxed), Ordering::Relaxed);
}

static PROFILE: AtomicBool = AtomicBool::new(false);
static PROFILE_INIT: Once = Once::new();
static PROFILE_TABLE: std::sync::Mutex<Vec<(&'static str, f64, f64, usize)>> = std::sync::Mutex::new(Vec::new());

/// Per-op timing is collected when `FAST_PROFILE=1` or after [`set_profiling`].
pub fn profiling() -> bool {
    PROFILE_INIT.call_once(|| {
        if std::env::var("FAST_PROFILE").is_ok_and(|v| v == "1") {
            PROFILE.store(true, Ordering::SeqCst);
        }
    });
    PROFILE.load(Ordering::Relaxed)
}

pub fn set_profiling(on: bool) {
    profiling();
    PROFILE.store(on, Ordering::SeqCst);
}

pub(crate) fn profile_add(op: &'static str, forward: f64, backward: f64) {
    let mut t = PROFILE_TABLE.lock().unwrap_or_else(|e| e.into_inner());
    match t.iter_mut().find(|e| e.0 == op) {
        Some(e) => {
            e.1 += forward;
            e.2 += backward;
            e.3 += 1;
        }
        None => t.push((op, forward, backward, 1)),
    }
}

/// Accumulated `(op, forward seconds, backward seconds, calls)`, slowest first.
/// Forward time of an op is the wall time since the previous recording.
pub fn profile_snapshot() -> Vec<(&'static str, f64, f64, usize)> {
    let mut t = PROFILE_TABLE.lock().unwrap_or_else(|e| e.into_inner()).clone();
    t.sort_by(|a, b| (b.1 + b.2).total_cmp(&(a.1 + a.2)));
    t
}

pub fn profile_reset() {
    PROFILE_TABLE.lock().unwrap_or_else(|e| e.into_inner()).clear();
}
