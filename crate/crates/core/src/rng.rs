//! SplitMix64 generator.
//!
//! State advances by the golden-ratio increment and each output is the
//! standard SplitMix64 finalizer of the new state. Uniform floats take the top
//! 53 bits: `u = (x >> 11) * 2^-53`, then `lo + u * (hi - lo)`, with draws that
//! round up to `hi` rejected.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, bound)`; `bound` must be positive.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        // Lemire's multiply-shift; bias is below 2^-64 * bound.
        ((self.next_u64() as u128 * bound as u128) >> 64) as u64
    }

    /// Uniform integer in the inclusive range.
    pub fn range_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        lo + self.below(hi - lo + 1)
    }

    /// Splits off an independent child stream.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }

    fn uniform<T: Element>(&mut self, lo: T, hi: T) -> T {
        loop {
            let u = T::of(self.next_f64());
            let v = lo + u * (hi - lo);
            if v < hi {
                return v;
            }
        }
    }
}

/// Tensor of independent uniform draws in `[lo, hi)`.
pub fn rand_uniform<T: Element>(
    rng: &mut Rng,
    shape: impl Into<Vec<usize>>,
    lo: T,
    hi: T,
) -> Result<Tensor<T>> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!("uniform range [{lo}, {hi}) is empty")));
    }
    Tensor::from_fn(shape, |_| rng.uniform(lo, hi))
}
