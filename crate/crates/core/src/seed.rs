//! Seed derivation. Every random stream in the crate is keyed by a path of
//! integers rather than by draw order, so work can be regenerated piecewise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Default seed for commands that are not given one.
pub const DEFAULT_SEED: u64 = 20220612;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `parts` into `base`, one splitmix round per component.
pub fn derive(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
