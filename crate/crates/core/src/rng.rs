//! Seed plumbing. Every random draw in the crate comes from a ChaCha8 stream
//! whose seed is derived from one master seed through named sub-streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream names used across the crate.
pub mod stream {
    pub const SPLIT: &str = "split";
    pub const INIT: &str = "init";
    pub const DROPOUT: &str = "dropout";
    pub const PERTURB: &str = "perturb";
    pub const SYNTH: &str = "synth";
    pub const BATCH: &str = "batch";
    pub const GP: &str = "gp";
    pub const MC: &str = "mc";
    pub const PAIRING: &str = "pairing";
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed of the named sub-stream of `master`.
pub fn derive(master: u64, name: &str) -> u64 {
    mix64(master ^ mix64(fnv1a(name.as_bytes())))
}

/// Counter-based split: the `index`-th child seed of `seed`.
pub fn derive_indexed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Child seed keyed by an arbitrary string (e.g. a sample id).
pub fn derive_keyed(seed: u64, key: &str) -> u64 {
    mix64(seed ^ mix64(fnv1a(key.as_bytes()) ^ 0xA076_1D64_78BD_642F))
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
