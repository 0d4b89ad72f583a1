//! Seeded random streams.
//!
//! Every consumer of randomness gets its own stream keyed by
//! `(seed, purpose label, index)`, so adding a consumer never perturbs the
//! draws seen by another one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// 32-byte seed for the stream `(seed, label, index)`.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    hasher.finalize().into()
}

pub fn stream(seed: u64, label: &str, index: u64) -> StreamRng {
    ChaCha8Rng::from_seed(derive_seed(seed, label, index))
}

/// A derived 64-bit seed, for handing a sub-seed to a nested evaluation.
pub fn derive_u64(seed: u64, label: &str, index: u64) -> u64 {
    let bytes = derive_seed(seed, label, index);
    u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
}
