//! Seeded randomness for splits, augmentation plans and fixtures.
//!
//! The generator is ChaCha20 (`rand_chacha::ChaCha20Rng`). A `u64` seed is
//! expanded to the 256-bit key with `rand_core`'s documented PCG32-based
//! `seed_from_u64`, which is value-stable across releases. Derived values
//! use fixed formulas so plans reproduce across implementations:
//!
//! - unit float: `(next_u64() >> 11) * 2^-53`, in `[0, 1)`
//! - bounded integer: rejection sampling on `next_u64()` against the largest
//!   multiple of the bound
//! - shuffle: Fisher-Yates from the last index down

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub struct SeededRng {
    inner: ChaCha20Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for a labelled purpose, so that adding draws to one
    /// consumer never shifts another.
    pub fn derive(seed: u64, stream: &str) -> Self {
        // FNV-1a over the label, mixed into the seed.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in stream.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        Self::new(seed ^ h)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi]` (the upper end is reachable only through rounding).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    /// Uniform integer in `[0, n)`. Panics when `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
