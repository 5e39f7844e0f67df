//! Deterministic random number generation.
//!
//! Everything random in the codec (weight init, synthetic data, test inputs)
//! flows through a seeded ChaCha8 stream with explicit integer-to-float
//! mapping, so identical seeds give byte-identical results on any platform.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::scalar::Scalar;
use crate::tensor::{Dims, Tensor};

#[derive(Debug, Clone)]
pub struct DetRng(ChaCha8Rng);

impl DetRng {
    pub fn seeded(seed: u64) -> Self {
        DetRng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Independent substream, e.g. one per dataset sequence.
    pub fn substream(seed: u64, index: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&index.to_le_bytes());
        key[16] = 0x9e;
        key[17] = 0x37;
        DetRng(ChaCha8Rng::from_seed(key))
    }

    pub fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in [0, 1) with 24 bits of resolution (exact in f32).
    pub fn unit(&mut self) -> f64 {
        (self.next_u32() >> 8) as f64 * (1.0 / (1u32 << 24) as f64)
    }

    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: u32) -> u32 {
        // Multiply-shift; bias is < 2^-32, irrelevant for our uses.
        ((self.next_u32() as u64 * n as u64) >> 32) as u32
    }
}

/// Tensor with elements uniform in [lo, hi).
pub fn uniform_tensor<T: Scalar>(dims: Dims, lo: f64, hi: f64, rng: &mut DetRng) -> Tensor<T> {
    let mut t = Tensor::zeros(dims);
    for v in t.data_mut() {
        *v = T::of_f64(rng.range_f64(lo, hi));
    }
    t
}

/// Fan-in scaled uniform init for conv weights: U(-a, a), a = 1/sqrt(fan_in).
pub fn conv_init<T: Scalar>(out_c: usize, in_c: usize, k: usize, rng: &mut DetRng) -> Tensor<T> {
    let a = 1.0 / ((in_c * k * k) as f64).sqrt();
    uniform_tensor(Dims::new(out_c, in_c, k, k), -a, a, rng)
}
