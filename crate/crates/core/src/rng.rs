//! Seeded random streams.
//!
//! Every random draw in the crate goes through a [`Stream`], and streams are
//! derived from `(master_seed, cell_index, stage)` by a fixed 64-bit hash, so
//! two runs with the same master seed see identical draws and changing one
//! experiment cell never shifts the draws of another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable stream id: FNV-1a over the little-endian seed, the little-endian
/// cell index and the UTF-8 stage name, passed through SplitMix64.
pub fn stream_id(master_seed: u64, cell_index: u64, stage: &str) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &master_seed.to_le_bytes());
    h = fnv1a(h, &cell_index.to_le_bytes());
    h = fnv1a(h, stage.as_bytes());
    mix64(h)
}

pub fn stream(master_seed: u64, cell_index: u64, stage: &str) -> Stream {
    Stream::seed_from_u64(stream_id(master_seed, cell_index, stage))
}

pub fn from_seed(seed: u64) -> Stream {
    Stream::seed_from_u64(seed)
}

/// Inverse-CDF draw from a probability vector. Falls back to the last index
/// with positive mass when rounding leaves the cumulative sum short of `u`.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    debug_assert!(!probs.is_empty());
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

pub fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    u < p
}
