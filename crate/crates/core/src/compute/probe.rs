//! Thread-local allocation probe.
//!
//! Every [`Tensor`](super::Tensor) buffer is counted while alive; attention
//! kernels also report the size of each attention map they materialize.
//! Counters are per thread, so measure on the thread that runs the forward.

use std::cell::Cell;

thread_local! {
    static LIVE: Cell<i64> = const { Cell::new(0) };
    static PEAK: Cell<i64> = const { Cell::new(0) };
    static MAX_ATTN: Cell<usize> = const { Cell::new(0) };
    static ATTN_MAPS: Cell<usize> = const { Cell::new(0) };
}

pub(crate) fn on_alloc(bytes: usize) {
    LIVE.with(|live| {
        let now = live.get() + bytes as i64;
        live.set(now);
        PEAK.with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
}

pub(crate) fn on_free(bytes: usize) {
    LIVE.with(|live| live.set(live.get() - bytes as i64));
}

/// Records one materialized attention map of `elements` scalars.
pub fn note_attention_map(elements: usize) {
    MAX_ATTN.with(|m| m.set(m.get().max(elements)));
    ATTN_MAPS.with(|c| c.set(c.get() + 1));
}

/// Bytes of tensor data currently alive on this thread.
pub fn live_bytes() -> usize {
    LIVE.with(|l| l.get().max(0) as usize)
}

/// High-water mark of [`live_bytes`] since the last [`reset`].
pub fn peak_bytes() -> usize {
    PEAK.with(|p| p.get().max(0) as usize)
}

/// Largest attention map (in elements) seen since the last [`reset`].
pub fn max_attention_elements() -> usize {
    MAX_ATTN.with(|m| m.get())
}

/// Number of attention maps materialized since the last [`reset`].
pub fn attention_maps() -> usize {
    ATTN_MAPS.with(|c| c.get())
}

/// Restarts peak and attention tracking from the current live level.
pub fn reset() {
    let live = LIVE.with(|l| l.get());
    PEAK.with(|p| p.set(live));
    MAX_ATTN.with(|m| m.set(0));
    ATTN_MAPS.with(|c| c.set(0));
}
