//! Seeded random streams. Every stochastic component takes its randomness
//! from an explicit stream so runs are bit-reproducible.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}

/// SplitMix64 finalizer; derives independent child seeds from `(seed, stream)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform value in `[-1, 1)` determined entirely by `(seed, key)`.
pub fn hashed_unit(seed: u64, key: u64) -> f64 {
    let bits = derive_seed(seed, key) >> 11;
    (bits as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}
