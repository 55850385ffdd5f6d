//! Named random sub-streams derived from a single experiment seed.
//!
//! Every consumer of randomness (positions, channels, tasks, ...) draws from
//! its own ChaCha stream so that changing how many values one consumer draws
//! never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a, used only to turn stream names into stream ids.
fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer; mixes a seed with an index.
pub fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A deterministic generator for the named sub-stream of `seed`.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name));
    rng
}
