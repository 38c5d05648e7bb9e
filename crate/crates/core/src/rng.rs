//! Seeded random streams.
//!
//! Every stochastic choice draws from a ChaCha8 stream whose seed is derived
//! from a base seed and a purpose tag, so independent runs never share or
//! reorder each other's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Mixes a base seed with a purpose tag.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(tag.as_bytes());
    let digest = h.finalize();
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(out)
}

pub fn stream(base: u64, tag: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(base, tag))
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
