//! Per-thread high-water mark of dense grid-sized buffers.
//!
//! Every code path that materializes a dense vector or matrix proportional to
//! the grid (folding, unfolding, dense sampling) reports its length here, so
//! tests can assert that a QTT solve never touched an `O(2^L)` buffer.

use std::cell::Cell;

thread_local! {
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

/// Records a dense allocation of `len` scalars.
pub fn note(len: usize) {
    PEAK.with(|p| p.set(p.get().max(len)));
}

/// Largest dense allocation on this thread since the last [`reset`].
pub fn peak() -> usize {
    PEAK.with(Cell::get)
}

pub fn reset() {
    PEAK.with(|p| p.set(0));
}
