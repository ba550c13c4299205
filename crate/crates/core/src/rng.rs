//! Reproducible, independent random streams keyed by `(seed, id)`.
//!
//! Each stream is a ChaCha8 generator keyed by the seed with the id as its
//! stream selector, so any worker can reconstruct the stream of any
//! trajectory without coordination.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Domain-separation tags for the different consumers of randomness in a run.
pub mod purpose {
    pub const TRAINING_SET: u64 = 1;
    pub const REFERENCE_SET: u64 = 2;
    pub const FORWARD: u64 = 3;
    pub const BACKWARD: u64 = 4;
    pub const STATIONARY: u64 = 5;
    pub const PINN_INIT: u64 = 6;
    pub const PINN_BATCH: u64 = 7;
    pub const FIT_JITTER: u64 = 8;
    pub const HELD_OUT: u64 = 9;
}

/// SplitMix64 finalizer, used to derive sub-seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one purpose of a run, so that e.g. forward trajectory `7` and
/// backward trajectory `7` never share a stream.
pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    mix64(seed ^ mix64(purpose))
}

#[derive(Debug, Clone)]
pub struct Stream(ChaCha8Rng);

/// Independent reproducible stream for trajectory `id` under `seed`.
pub fn spawn_stream(seed: u64, id: u64) -> Stream {
    let mut key = [0u8; 32];
    for (k, chunk) in key.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(&mix64(seed.wrapping_add(k as u64)).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(id);
    Stream(rng)
}

impl Stream {
    #[inline]
    pub fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }

    /// Uniform on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    /// Uniform on `[low, high)`.
    #[inline]
    pub fn uniform_in(&mut self, low: f64, high: f64) -> f64 {
        let v = low + (high - low) * self.uniform();
        // rounding can land exactly on `high`
        if v < high {
            v
        } else {
            low
        }
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: u64) -> u64 {
        self.0.random_range(0..n)
    }
}

impl RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}
