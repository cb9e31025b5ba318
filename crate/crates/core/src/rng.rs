//! Reproducible random stream used for model generation and Lanczos start
//! vectors.
//!
//! The generator is xoshiro256++ whose 256-bit state is expanded from the
//! 64-bit seed with SplitMix64 (the reference seeding procedure published
//! with xoshiro). A uniform double is formed from the top 53 bits:
//! `u = (x >> 11) * 2^-53`, so `u` lies in `[0, 1)`.
//!
//! Reference output for seed 42 (first four `next_u64` values):
//!
//! ```text
//! 0xd0764d4f4476689f
//! 0x519e4174576f3791
//! 0xfbe07cfb0c24ed8c
//! 0xb37d9f600cd835b8
//! ```

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

#[derive(Debug, Clone)]
pub struct Stream {
    inner: Xoshiro256PlusPlus,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[-scale, scale)`.
    pub fn symmetric(&mut self, scale: f64) -> f64 {
        scale * (2.0 * self.next_f64() - 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Stream::new(7);
        let mut b = Stream::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn seed_42_reference_stream() {
        let mut s = Stream::new(42);
        let expected = [
            0xd0764d4f4476689f_u64,
            0x519e4174576f3791,
            0xfbe07cfb0c24ed8c,
            0xb37d9f600cd835b8,
        ];
        for e in expected {
            assert_eq!(s.next_u64(), e);
        }
    }

    #[test]
    fn unit_interval() {
        let mut s = Stream::new(1);
        for _ in 0..10_000 {
            let u = s.next_f64();
            assert!((0.0..1.0).contains(&u));
        }
    }
}
