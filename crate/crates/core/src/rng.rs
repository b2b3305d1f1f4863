//! Named random streams derived from one root seed.
//!
//! `stream_seed(root, purpose)` is the first eight bytes (little endian) of
//! `SHA-256(root as u64 LE || purpose as UTF-8)`, so every consumer gets an
//! independent, reproducible generator regardless of call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn stream_seed(root: u64, purpose: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(purpose.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn stream_rng(root: u64, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(root, purpose))
}
