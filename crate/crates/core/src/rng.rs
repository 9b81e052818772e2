//! Seed derivation and the crate's deterministic RNG.
//!
//! All randomness flows from `u64` seeds through ChaCha12, so any run is
//! reproducible from the seeds recorded in its manifest. Derived seeds use
//! a splitmix-style mix so that adding streams or trials never perturbs
//! existing ones.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// splitmix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent stream seed from a base seed and a stream tag.
pub fn derive(base: u64, stream: u64) -> u64 {
    mix64(base ^ mix64(stream))
}

/// Per-trial seed for sweep trial `index` under `base`.
pub fn trial_seed(base: u64, index: u64) -> u64 {
    mix64(base.wrapping_add(mix64(index.wrapping_add(1))))
}

/// Named sub-streams of one trial seed.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const PROBE: u64 = 4;
    pub const SUBSAMPLE: u64 = 5;
    pub const EVAL: u64 = 6;
}

/// Seeded RNG used everywhere in the crate.
pub fn rng_from(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}
