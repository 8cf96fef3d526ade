//! Seed derivation for independent, order-free random streams.
//!
//! Every stochastic component draws from its own ChaCha stream keyed by the
//! experiment seed plus a purpose tag and coordinates (collaborator, round).
//! Streams never share state, so results do not depend on which thread runs
//! which collaborator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a; stable across platforms and toolchains, unlike `DefaultHasher`.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Folds a sequence of words into one seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}

/// Purpose tags keep streams for different jobs apart even when the other
/// coordinates coincide.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const DATASET: u64 = 2;
    pub const PARTITION: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const TRAIN: u64 = 5;
    pub const SELECT: u64 = 6;
    pub const PIXELS: u64 = 7;
}
