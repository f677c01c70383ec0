//! Deterministic seed derivation.
//!
//! Every random decision in the pipeline draws from a ChaCha stream seeded by
//! mixing the run's base seed with a stage name (and optionally an index, for
//! per-tree or per-restart streams). The derivation is a fixed function of its
//! inputs, so reruns with the same config reproduce every artifact bit for
//! bit, and changing one stage's name or index never perturbs another stage.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the stage name; stable across platforms and releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer; diffuses related inputs into unrelated outputs.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the seed for a named stage of a run.
pub fn derive_seed(base: u64, stage: &str) -> u64 {
    splitmix(base ^ fnv1a(stage.as_bytes()))
}

/// Derive the seed for the `index`-th member of a named stage (tree i,
/// restart i, ...).
pub fn derive_seed_indexed(base: u64, stage: &str, index: u64) -> u64 {
    splitmix(derive_seed(base, stage).wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// ChaCha stream for a named stage.
pub fn rng_for(base: u64, stage: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stage))
}

/// ChaCha stream for the `index`-th member of a named stage.
pub fn rng_for_indexed(base: u64, stage: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed_indexed(base, stage, index))
}
