//! Seeded random streams.
//!
//! Every run owns a [`SimRng`]. Child streams are derived from a master seed
//! and a sequence of integer tags, so realization `j` of a study draws the
//! same numbers whatever order (or thread) it runs on.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags used when splitting a realization seed into sub-streams.
pub mod stream {
    pub const PROBLEM: u64 = 1;
    pub const RES: u64 = 2;
    pub const SGD: u64 = 3;
    pub const PLAIN: u64 = 4;
    pub const TEST_SET: u64 = 5;
    pub const PILOT: u64 = 6;
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed for `(parent, tag)`.
pub fn child_seed(parent: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ splitmix64(tag.wrapping_add(0xA076_1D64_78BD_642F)))
}
