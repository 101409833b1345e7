//! Small shared helpers: stable hashing for seed derivation and digests.

use sha2::{Digest, Sha256};

/// FNV-1a over length-prefixed parts. Stable across runs and platforms,
/// unlike `std::collections::hash_map::DefaultHasher`.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut byte = |b: u8| {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    };
    for part in parts {
        for b in (part.len() as u64).to_le_bytes() {
            byte(b);
        }
        for &b in *part {
            byte(b);
        }
    }
    h
}

/// Derives a child RNG seed from a base seed and a list of string labels.
pub fn derive_seed(base: u64, labels: &[&str]) -> u64 {
    let mut parts: Vec<&[u8]> = Vec::with_capacity(labels.len() + 1);
    let base_bytes = base.to_le_bytes();
    parts.push(&base_bytes);
    for label in labels {
        parts.push(label.as_bytes());
    }
    stable_hash(&parts)
}

/// Hex-encoded SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}
