//! Seed derivation for reproducible per-item random streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// A ChaCha stream keyed by `(seed, parts...)`.
///
/// Derived streams are independent of iteration order and worker count.
pub fn derive(seed: u64, parts: &[&[u8]]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

/// A uniform draw in `[0, 1)` keyed by `(seed, parts...)`.
pub fn unit(seed: u64, parts: &[&[u8]]) -> f64 {
    use rand::Rng;
    derive(seed, parts).random::<f64>()
}
