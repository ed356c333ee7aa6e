//! Seed handling. Every random choice in the crate flows from one user-visible
//! seed, split into independent per-subsystem streams by a short label so that
//! e.g. data generation and fitting never share a stream.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// Maximum label length that fits in the 32-byte ChaCha key next to the seed.
const MAX_LABEL: usize = 24;

/// Derive a deterministic RNG stream for `label` from the user seed.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    let bytes = label.as_bytes();
    debug_assert!(bytes.len() <= MAX_LABEL, "rng label too long: {label}");
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    let take = bytes.len().min(MAX_LABEL);
    key[8..8 + take].copy_from_slice(&bytes[..take]);
    ChaCha8Rng::from_seed(key)
}
