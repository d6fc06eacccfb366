//! Deterministic seed fan-out.
//!
//! One master seed is expanded into independent streams (dataset, parameter
//! init, training noise, prior sampling, ...) by a stable integer hash, so
//! runs are reproducible and parallel workers can derive per-item seeds
//! without sharing an RNG. `std`'s hashers are not stable across releases,
//! hence the explicit SplitMix64 chain.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream tags for the independent RNG streams derived from a master seed.
pub const STREAM_DATASET: u64 = 1;
pub const STREAM_INIT: u64 = 2;
pub const STREAM_NOISE: u64 = 3;
pub const STREAM_PRIOR: u64 = 4;
pub const STREAM_EVAL: u64 = 5;

/// SplitMix64 finalizer; bijective on u64.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combines a seed with one tag.
pub fn mix(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

/// Derives a child seed from a master seed and a tag path
/// (e.g. `[STREAM_DATASET, sample_index]`).
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(master);
    for &t in tags {
        s = mix(s, t);
    }
    s
}

/// A seeded, platform-stable RNG for the given stream.
pub fn make_rng(master: u64, tags: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(master, tags))
}
