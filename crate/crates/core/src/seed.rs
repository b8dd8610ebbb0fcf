//! Seed splitting.
//!
//! Every random stream is derived from one 64-bit base seed by folding a
//! path of stream labels through SplitMix64:
//!
//! ```text
//! s_0 = base
//! s_{i+1} = splitmix64(s_i ^ splitmix64(label_i + 0x9E37_79B9_7F4A_7C15 * (i + 1)))
//! ```
//!
//! The resulting value seeds a ChaCha8 generator. Streams for distinct label
//! paths are independent for practical purposes, so work items can be
//! generated in any order or on any thread.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `base` and a label path.
pub fn derive(base: u64, path: &[u64]) -> u64 {
    path.iter().enumerate().fold(base, |s, (i, &label)| {
        let salt = splitmix64(label.wrapping_add(GOLDEN.wrapping_mul(i as u64 + 1)));
        splitmix64(s ^ salt)
    })
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream labels used by the generators.
pub mod stream {
    pub const OPERATOR: u64 = 1;
    pub const INSTANCE: u64 = 2;
}
