//! Seeded random streams.
//!
//! Every simulated path owns a ChaCha8 stream selected by `(seed, path)`, so a
//! path's noise does not depend on how paths are split across threads.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// SplitMix64 finalizer, used to derive independent seeds from a base seed.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `base` and a purpose tag.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    mix64(mix64(base) ^ tag.rotate_left(17))
}

/// Purpose tags for derived seeds.
pub mod tag {
    pub const INIT_VALUE: u64 = 1;
    pub const INIT_COSTATE: u64 = 2;
    pub const INIT_POLICY: u64 = 3;
    pub const SIMULATION: u64 = 0x51;
    pub const SUBSAMPLE: u64 = 0x52;
    pub const BOOTSTRAP: u64 = 0x53;
    pub const EVALUATION: u64 = 0x54;
}

/// Random stream with the handful of draws the library needs.
#[derive(Clone, Debug)]
pub struct Stream(ChaCha8Rng);

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Stream for one simulated path.
    pub fn for_path(seed: u64, path: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        Stream(rng)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.0)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }

    /// Standard normal truncated to `[-k, k]` by rejection.
    pub fn truncated_normal(&mut self, k: f64) -> f64 {
        loop {
            let z = self.normal();
            if z.abs() <= k {
                return z;
            }
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
}
