//! Thread-local floating-point operation counter.
//!
//! Every forward kernel reports its cost from its shapes when counting is
//! active. Backward passes are not counted. The per-element costs below are
//! the accounting convention shared with the analytic complexity models.

use std::cell::Cell;

/// Bilinear upsampling: four weighted taps plus three additions per output.
pub const BILINEAR_PER_OUTPUT: u64 = 7;
/// Softmax: max scan, subtract, exponentiate, accumulate, divide.
pub const SOFTMAX_PER_ELEMENT: u64 = 5;
/// Normalization with statistics computed from the input.
pub const NORM_STATS_PER_ELEMENT: u64 = 7;
/// Normalization with frozen statistics: subtract, divide, scale, shift.
pub const NORM_FROZEN_PER_ELEMENT: u64 = 4;

thread_local! {
    static ACTIVE: Cell<bool> = const { Cell::new(false) };
    static TOTAL: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn record(flops: u64) {
    ACTIVE.with(|a| {
        if a.get() {
            TOTAL.with(|t| t.set(t.get() + flops));
        }
    });
}

/// Runs `f` with counting enabled and returns its result and the flops it
/// performed on this thread. Nested calls report their own share only.
pub fn count<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let was_active = ACTIVE.with(|a| a.replace(true));
    let before = TOTAL.with(|t| t.get());
    let out = f();
    let after = TOTAL.with(|t| t.get());
    ACTIVE.with(|a| a.set(was_active));
    if !was_active {
        TOTAL.with(|t| t.set(before));
    }
    (out, after - before)
}
