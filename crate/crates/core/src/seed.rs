//! Per-purpose random streams derived from one top-level seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// `sub_seed = hash(seed, tag)`; stable across platforms and releases.
pub fn sub_seed(seed: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes"))
}

pub fn rng_for(seed: u64, tag: &str) -> Rng {
    Rng::seed_from_u64(sub_seed(seed, tag))
}
