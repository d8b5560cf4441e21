//! Deterministic random streams.
//!
//! Every stochastic component derives its generator from the master seed and a
//! stream index, never from scheduling order, so parallel runs reproduce the
//! sequential result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SphtrRng = ChaCha8Rng;

/// Independent generator number `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> SphtrRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Folds extra identifiers into a stream index.
pub fn stream_id(parts: &[u64]) -> u64 {
    // splitmix64 finalizer over the parts
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h ^= p
            .wrapping_add(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(h << 6)
            .wrapping_add(h >> 2);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}
