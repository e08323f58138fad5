//! Operation counting for instrumented kernel runs.
//!
//! Kernels report their work here; nothing is recorded unless a
//! [`measure`] scope is active on the current thread. Scopes are
//! thread-local, so concurrent runs on different threads never mix tallies.

use std::cell::Cell;

use serde::Serialize;

/// Per-category operation totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OpTally {
    /// Multiply-accumulates, one op each.
    pub macs: u128,
    /// Bilinear-interpolated output elements.
    pub interp_outputs: u128,
    /// Standalone accumulation adds, one op each.
    pub adds: u128,
}

impl OpTally {
    /// Ops per interpolated output element.
    pub const INTERP_COST: u128 = 4;

    pub fn total(&self) -> u128 {
        self.macs + Self::INTERP_COST * self.interp_outputs + self.adds
    }
}

thread_local! {
    static ACTIVE: Cell<Option<OpTally>> = const { Cell::new(None) };
}

fn record(f: impl FnOnce(&mut OpTally)) {
    ACTIVE.with(|slot| {
        if let Some(mut t) = slot.get() {
            f(&mut t);
            slot.set(Some(t));
        }
    });
}

pub(crate) fn macs(n: u128) {
    record(|t| t.macs += n);
}

pub(crate) fn interp(n: u128) {
    record(|t| t.interp_outputs += n);
}

pub(crate) fn adds(n: u128) {
    record(|t| t.adds += n);
}

/// Runs `f` with counting enabled and returns its result with the tally.
///
/// Nested scopes restore the outer tally on exit; the inner work is not
/// added to the outer scope.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, OpTally) {
    let outer = ACTIVE.with(|slot| slot.replace(Some(OpTally::default())));
    let result = f();
    let tally = ACTIVE.with(|slot| slot.replace(outer)).unwrap_or_default();
    (result, tally)
}
