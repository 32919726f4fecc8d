//! Instrumentation for verifying that the quantized inference path never
//! touches floating-point arithmetic.
//!
//! Every library entry point that performs float work (quantize, dequantize,
//! coefficient compilation, requantizer construction, oracles, the FP64
//! reference layer) calls [`record_float_use`]. The integer kernels do not.
//! A test can then wrap a code region in an [`IntegerOnlyGuard`] and assert
//! that the recorded count stayed at zero.

use std::cell::Cell;

thread_local! {
    static GUARD_DEPTH: Cell<u32> = const { Cell::new(0) };
    static FLOAT_USES: Cell<u64> = const { Cell::new(0) };
}

/// Marks one use of floating-point arithmetic. No-op unless a guard is
/// active on this thread.
#[inline]
pub fn record_float_use() {
    GUARD_DEPTH.with(|d| {
        if d.get() > 0 {
            FLOAT_USES.with(|c| c.set(c.get() + 1));
        }
    });
}

/// RAII scope that counts float-performing library calls made on the
/// current thread while it is alive.
pub struct IntegerOnlyGuard {
    start: u64,
}

impl IntegerOnlyGuard {
    #[allow(clippy::new_without_default)]
    pub fn new() -> Self {
        GUARD_DEPTH.with(|d| d.set(d.get() + 1));
        Self {
            start: FLOAT_USES.with(Cell::get),
        }
    }

    /// Number of float-performing calls recorded since this guard was created.
    pub fn float_uses(&self) -> u64 {
        FLOAT_USES.with(Cell::get) - self.start
    }
}

impl Drop for IntegerOnlyGuard {
    fn drop(&mut self) {
        GUARD_DEPTH.with(|d| d.set(d.get() - 1));
    }
}
