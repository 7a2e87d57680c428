//! Deterministic seed derivation.
//!
//! One master seed drives an experiment; each phase (data collection, gain
//! sampling, closed-loop noise, ...) and each replicate derives its own
//! sub-seed so phases are independently reproducible. The splitting rule is
//! fixed and documented here:
//!
//! `sub_seed(master, tag, index) = splitmix64(master ⊕ fnv1a64(tag) ⊕ (index + 0x9E37_79B9_7F4A_7C15))`
//!
//! splitmix64 and FNV-1a are stable across platforms and releases, unlike
//! hasher implementations from the standard library.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// splitmix64 finalizer: bijective avalanche mix of a 64-bit word.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derives the sub-seed for phase `tag`, replicate/stream `index`.
pub fn sub_seed(master: u64, tag: &str, index: u64) -> u64 {
    splitmix64(master ^ fnv1a64(tag.as_bytes()) ^ index.wrapping_add(0x9E37_79B9_7F4A_7C15))
}

/// The RNG used throughout: explicit, seedable, portable.
pub type Rng = ChaCha12Rng;

/// RNG for phase `tag`, stream `index`, under `master`.
pub fn rng_for(master: u64, tag: &str, index: u64) -> Rng {
    ChaCha12Rng::seed_from_u64(sub_seed(master, tag, index))
}
