//! Deterministic RNG streams.
//!
//! Every random draw in this crate flows through a [`ChaCha8Rng`] seeded
//! from a base seed plus a stream tag, so independent pieces of work (stages,
//! folds, sweep points) get reproducible, non-overlapping streams regardless
//! of scheduling order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a base seed with a stream tag into a fresh 64-bit seed.
///
/// SplitMix64 finalizer; cheap and well-distributed, so adjacent tags do not
/// produce correlated streams.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(tag)
        .wrapping_add(0x2545_f491_4f6c_dd1d);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG for a `(base seed, stream tag)` pair.
pub fn stream(base: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag))
}
