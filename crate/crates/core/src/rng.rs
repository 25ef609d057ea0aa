//! Seed derivation for independent, reproducible random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used everywhere in the crate.
pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of stream tags into a new seed.
///
/// Distinct tag paths give statistically independent streams.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t.wrapping_add(0x632B_E59B_D9B4_E019))))
}

/// A generator seeded from a base seed and tag path.
pub fn stream(base: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, tags))
}

/// Stream tags, kept in one place so streams never collide by accident.
pub mod tag {
    pub const ENV: u64 = 1;
    pub const GENERATE: u64 = 2;
    pub const PAIRS: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const TRIAL: u64 = 6;
    pub const CALIBRATION: u64 = 7;
    pub const ITERATION: u64 = 8;
}
