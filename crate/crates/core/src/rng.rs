//! Seed derivation. Every stochastic component owns a ChaCha stream derived
//! from a master seed and a tag path, so runs are reproducible regardless of
//! scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a master seed with a path of tags into an independent child seed.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(master), |acc, &t| splitmix64(acc ^ splitmix64(t.wrapping_add(0x5851_F42D))))
}

pub fn rng_from(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}
