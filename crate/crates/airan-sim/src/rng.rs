//! Seedable RNG with named, independent sub-streams.
//!
//! Every source of randomness in the system (dropout masks, policy sampling,
//! replay-buffer sampling, trace synthesis, weight init, episode offsets)
//! draws from its own stream derived from one root seed, so adding draws to
//! one consumer never perturbs another and whole runs replay bit-exactly.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Root seed from which all named streams are derived.
#[derive(Debug, Clone, Copy)]
pub struct RngHub {
    root: u64,
}

impl RngHub {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root_seed(&self) -> u64 {
        self.root
    }

    /// Independent stream for a named consumer. The same `(root, name)` pair
    /// always yields the same generator.
    pub fn stream(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(splitmix64(self.root ^ fnv1a(name.as_bytes())))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}
