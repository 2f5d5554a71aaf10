//! Deterministic derivation of independent RNG streams.
//!
//! Every stochastic stage (trajectory synthesis, noise, weight init, dropout,
//! tuning cells, experiment replicates) seeds its own ChaCha8 stream with a
//! value derived from the user-facing base seed and a structural tag. Streams
//! are therefore independent of thread scheduling and of how much randomness
//! earlier stages consumed, which is what makes `--jobs N` runs byte-identical
//! for every N.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed from `base` and a structural tag. The tag is a short
/// static label plus the indices that identify the consumer (trajectory
/// number, grid cell, replicate, ...).
pub fn child_seed(base: u64, label: &str, indices: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update([label.len() as u8]);
    hasher.update(label.as_bytes());
    for ix in indices {
        hasher.update(ix.to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// ChaCha8 stream for the given child seed.
pub fn child_rng(base: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(child_seed(base, label, indices))
}
