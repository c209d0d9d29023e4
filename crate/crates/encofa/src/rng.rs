//! Deterministic per-purpose random sub-streams.
//!
//! Every random decision in the pipeline (data order, augmentation, dynamic
//! labels, feature-swap coin flips, ...) draws from its own stream keyed by
//! `(base seed, purpose tag, a, b)`. Streams never share state, so adding or
//! skipping draws in one place cannot shift the results of another, and any
//! decision is reproducible from its key alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche for cheap key mixing.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a stream seed from a base seed, a purpose tag, and two indices.
pub fn stream_seed(base: u64, purpose: &str, a: u64, b: u64) -> u64 {
    let mut h = base ^ 0x9e37_79b9_7f4a_7c15;
    for byte in purpose.as_bytes() {
        h = mix(h ^ u64::from(*byte));
    }
    h = mix(h ^ a);
    mix(h ^ b)
}

/// A seeded generator for one purpose stream.
pub fn stream_rng(base: u64, purpose: &str, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(base, purpose, a, b))
}
