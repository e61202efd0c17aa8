//! Seed derivation for independent, reproducible random streams.
//!
//! Every stochastic step in the simulator draws from its own ChaCha stream
//! whose seed is derived from a base seed plus a list of tags (purpose,
//! client id, round, ...). Derivation is a splitmix64 chain, so streams for
//! different (tag, value) paths are decorrelated and the same path always
//! reproduces the same stream regardless of scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// FNV-1a hash of a tag name, used to turn purpose strings into seed tags.
pub fn tag(name: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derives a child seed from a base seed and a tag path.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut s = mix(base);
    for t in tags {
        s = mix(s ^ mix(*t));
    }
    s
}

/// A seeded RNG for the given tag path.
pub fn stream(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}
