//! Counter-based uniforms keyed by `(seed, key)`.
//!
//! Each key selects a ChaCha8 stream of the master seed, so a draw depends only
//! on the pair and never on the order in which keys are visited.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone)]
pub(crate) struct KeyedStream {
    base: ChaCha8Rng,
}

impl KeyedStream {
    pub(crate) fn new(seed: u64) -> Self {
        Self { base: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub(crate) fn u64_at(&self, key: u64) -> u64 {
        let mut rng = self.base.clone();
        rng.set_stream(key);
        rng.next_u64()
    }

    /// Uniform on `(0, 1]` with 53 random bits.
    pub(crate) fn open_unit_at(&self, key: u64) -> f64 {
        let bits = self.u64_at(key) >> 11;
        (bits + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Derives a child seed, e.g. the seed of trial `index` under a master seed.
pub(crate) fn derive_seed(master: u64, index: u64) -> u64 {
    KeyedStream::new(master).u64_at(index)
}

/// Sequential generator for solver start blocks and test data.
pub(crate) fn sequential(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn symmetric_unit(rng: &mut ChaCha8Rng) -> f64 {
    let bits = rng.next_u64() >> 11;
    bits as f64 * (2.0 / (1u64 << 53) as f64) - 1.0
}
