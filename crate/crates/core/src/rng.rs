//! Seeded random streams.
//!
//! A master seed fans out into independent ChaCha8 streams through the
//! generator's 64-bit stream selector, so each consumer ("functions",
//! "factors", "noise", ...) sees the same draws regardless of how much the
//! others consume.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named sub-streams of a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Functions = 1,
    Factors = 2,
    Noise = 3,
    Init = 4,
}

/// Generator for `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a seed together with a sequence of integers into a new seed.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(seed), |acc, &p| mix64(acc ^ mix64(p)))
}
