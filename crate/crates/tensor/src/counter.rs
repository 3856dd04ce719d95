//! Thread-local operation counter incremented by the forward kernels.
//!
//! Convolutions add `output elements × taps × input channels per group`
//! multiply-accumulates; pointwise, pooling and resampling ops add one
//! elementwise op per output element. Pure data movement (reshape, permute,
//! pixel shuffle, channel split) is free.

use std::cell::Cell;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCount {
    pub macs: u64,
    pub elementwise: u64,
}

impl OpCount {
    /// One MAC counts as two FLOPs; elementwise ops are not included.
    pub fn flops(&self) -> u64 {
        2 * self.macs
    }
}

thread_local! {
    static COUNT: Cell<OpCount> = const { Cell::new(OpCount { macs: 0, elementwise: 0 }) };
}

pub fn reset() {
    COUNT.with(|c| c.set(OpCount::default()));
}

pub fn snapshot() -> OpCount {
    COUNT.with(|c| c.get())
}

pub(crate) fn add_macs(n: usize) {
    COUNT.with(|c| {
        let mut v = c.get();
        v.macs += n as u64;
        c.set(v);
    });
}

pub(crate) fn add_elementwise(n: usize) {
    COUNT.with(|c| {
        let mut v = c.get();
        v.elementwise += n as u64;
        c.set(v);
    });
}

/// Runs `f` with a fresh counter and returns what it recorded.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, OpCount) {
    let saved = snapshot();
    reset();
    let out = f();
    let count = snapshot();
    COUNT.with(|c| c.set(saved));
    (out, count)
}
