//! Seeded random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from a
//! base seed and a list of labels, so concurrent work never shares state and
//! runs reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream labels used across the crate.
pub mod label {
    pub const PERSONA: u64 = 0x5045_5253;
    pub const HUMAN: u64 = 0x4855_4d4e;
    pub const POLICY: u64 = 0x504f_4c59;
    pub const PLANNER: u64 = 0x504c_414e;
    pub const SUBSAMPLE: u64 = 0x5355_4253;
    pub const PROBE: u64 = 0x5052_4f42;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with labels into a new 64-bit seed.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(seed), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

pub fn stream(seed: u64, labels: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, labels))
}
