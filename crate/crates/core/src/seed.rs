//! Sub-seed derivation from one master seed.
//!
//! `derive_seed(master, domain, index)` hashes the domain label with FNV-1a,
//! mixes it with the master seed and index through SplitMix64, and is stable
//! across platforms and releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn derive_seed(master: u64, domain: &str, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ fnv1a(domain)).wrapping_add(index))
}

pub fn rng_for(master: u64, domain: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, domain, index))
}

/// A derived seed together with how it was obtained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub domain: String,
    pub index: u64,
    pub seed: u64,
}

impl SeedRecord {
    pub fn derive(master: u64, domain: &str, index: u64) -> Self {
        SeedRecord {
            domain: domain.to_string(),
            index,
            seed: derive_seed(master, domain, index),
        }
    }
}
