//! Seed derivation shared by every stochastic component.
//!
//! All randomness in the crate flows from a single `u64` session seed that is
//! split into independent streams by mixing in a purpose tag and an index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed for stream `tag`, item `index`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    mix64(mix64(seed ^ mix64(tag)) ^ index)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) mod tags {
    pub const LAYOUT: u64 = 1;
    pub const INIT_DESIGN: u64 = 2;
    pub const FIT: u64 = 3;
    pub const RESPONSE: u64 = 4;
    pub const CUE: u64 = 5;
}
