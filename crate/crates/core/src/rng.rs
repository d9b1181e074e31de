//! Seed derivation and the generator used for every random draw.
//!
//! All sampling goes through [`Xoshiro256PlusPlus`], whose output is fixed by
//! its published reference algorithm, so a seed reproduces the same stream on
//! every platform. Independent streams (source rows, Monte Carlo trials) are
//! derived with the SplitMix64 finalizer.

use rand::SeedableRng;
pub use rand_xoshiro::Xoshiro256PlusPlus as Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of stream `stream` under `base`: `base ⊕ splitmix64(stream)`, mixed once more.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
