//! Seed derivation.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by
//! [`derive_seed`] over an ordered tuple of integers. The harness uses
//! `(seed, path_index)` for per-path seeds; Brownian paths use
//! `(path_seed, tag, level, knot)` for per-knot draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes an ordered tuple of integers into one 64-bit seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(GOLDEN, |acc, &p| {
        splitmix(acc.wrapping_add(GOLDEN) ^ splitmix(p.wrapping_add(GOLDEN)))
    })
}

pub fn rng_for(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}
