//! Seeded randomness. Every stochastic choice in the crate draws from a
//! [`ChaCha8Rng`] derived from an explicit seed.

pub use rand::Rng;
pub use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream from a parent seed and a label.
pub fn derive(seed: u64, label: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, label))
}

/// Child seed for `label` under `seed` (splitmix64 finaliser over the pair).
pub fn mix(seed: u64, label: u64) -> u64 {
    let mut z = seed ^ label.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
