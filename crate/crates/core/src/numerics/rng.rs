//! Seeded, stream-split randomness.
//!
//! Every draw in the crate goes through [`Rng`], a ChaCha8 keystream keyed by
//! the 64-bit seed (expanded with the PCG32 seeding routine of `rand_core`)
//! and separated by the 64-bit ChaCha stream nonce. ChaCha is a counter-based
//! generator, so `(seed, stream)` pins the exact sequence on every platform.
//!
//! Sub-seeds for independent subsystems come from [`derive_seed`], a
//! SplitMix64 finalizer applied to `master ^ label * GOLDEN`.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Well-known stream ids. Group- and prompt-level sampling streams use the
/// group or prompt index directly and live below `SAMPLING_LIMIT`.
pub mod streams {
    pub const SAMPLING_LIMIT: u64 = 1 << 40;
    pub const INDEPENDENT_OFFSET: u64 = 1 << 32;
    pub const WORLD: u64 = SAMPLING_LIMIT + 1;
    pub const RECORDS: u64 = SAMPLING_LIMIT + 2;
    pub const INIT: u64 = SAMPLING_LIMIT + 3;
    pub const TRAIN: u64 = SAMPLING_LIMIT + 4;
}

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent seed for a labelled subsystem.
pub fn derive_seed(master: u64, label: u64) -> u64 {
    mix64(master ^ label.wrapping_mul(GOLDEN))
}

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
    gaussian_calls: u64,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
            gaussian_calls: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh generator on another stream of the same seed.
    pub fn fork(&self, stream: u64) -> Rng {
        Rng::new(self.seed, stream)
    }

    /// `n` independent standard-normal draws.
    pub fn gaussian(&mut self, n: usize) -> Vec<f64> {
        self.gaussian_calls += 1;
        (0..n)
            .map(|_| self.inner.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Number of [`Rng::gaussian`] calls made so far (not scalar draws).
    pub fn gaussian_calls(&self) -> u64 {
        self.gaussian_calls
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in the closed range `[lo, hi]`.
    pub fn uniform_int(&mut self, lo: usize, hi: usize) -> usize {
        assert!(lo <= hi, "empty range {lo}..={hi}");
        self.inner.random_range(lo..=hi)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        p > 0.0 && self.uniform() < p
    }

    /// Uniform point on the unit sphere in `dim` dimensions.
    pub fn unit_vector(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v = self.gaussian(dim);
            let n = super::linalg::norm(&v);
            if n > 1e-12 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }
}
