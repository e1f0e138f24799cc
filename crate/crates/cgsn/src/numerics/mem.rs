//! Per-thread accounting of live tensor bytes.
//!
//! Every tensor storage registers its payload size on allocation and
//! deregisters on drop. Counters are thread-local: a forward pass runs on
//! one thread, so the per-segment peak is exact and unaffected by parallel
//! test threads. Tensors dropped on a different thread than they were
//! created on are not tracked correctly; the pipeline never does that.

use std::cell::Cell;

thread_local! {
    static LIVE: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

pub(crate) fn on_alloc(bytes: usize) {
    LIVE.with(|l| {
        let live = l.get() + bytes;
        l.set(live);
        PEAK.with(|p| {
            if live > p.get() {
                p.set(live);
            }
        });
    });
}

pub(crate) fn on_free(bytes: usize) {
    LIVE.with(|l| l.set(l.get().saturating_sub(bytes)));
}

/// Bytes of tensor payload currently alive on this thread.
pub fn live_tensor_bytes() -> usize {
    LIVE.with(|l| l.get())
}

/// High-water mark since the last [`reset_peak`].
pub fn peak_tensor_bytes() -> usize {
    PEAK.with(|p| p.get())
}

/// Reset the peak to the current live count and return the live count.
pub fn reset_peak() -> usize {
    let live = live_tensor_bytes();
    PEAK.with(|p| p.set(live));
    live
}
