//! Portable seeded randomness.
//!
//! Every random draw in the crate comes from a [`Pcg64`] generator
//! (PCG XSL-RR 128/64). Its state update is
//!
//! ```text
//! state <- state * 0x2360ed051fc65da44385df649fccf645 + increment   (mod 2^128)
//! out    = rotr64(hi64(state) ^ lo64(state), state >> 122)
//! ```
//!
//! Generators are never shared between logical substreams. A substream seed is
//! derived by hashing the run seed together with the identifying labels using
//! 64-bit FNV-1a over a fixed byte layout (see [`substream_seed`]), then
//! finalized with the SplitMix64 mixer so that nearby labels land far apart.

use rand::SeedableRng;
pub use rand_pcg::Pcg64;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed of a labelled substream.
///
/// Byte layout hashed: `seed` as 8 little-endian bytes, then each label's
/// UTF-8 bytes followed by a single `0x1f` separator.
pub fn substream_seed(seed: u64, labels: &[&str]) -> u64 {
    let mut bytes = Vec::with_capacity(8 + labels.iter().map(|l| l.len() + 1).sum::<usize>());
    bytes.extend_from_slice(&seed.to_le_bytes());
    for label in labels {
        bytes.extend_from_slice(label.as_bytes());
        bytes.push(0x1f);
    }
    mix64(fnv1a64(&bytes))
}

pub fn rng_from_seed(seed: u64) -> Pcg64 {
    Pcg64::seed_from_u64(seed)
}

pub fn substream(seed: u64, labels: &[&str]) -> Pcg64 {
    rng_from_seed(substream_seed(seed, labels))
}
