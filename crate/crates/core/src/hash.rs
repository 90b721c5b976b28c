//! Content hashing shared across the pipeline.
//!
//! Identifiers and checksums are SHA-256 based so that identical content
//! collides deterministically on any machine.

use sha2::{Digest, Sha256};

/// Full SHA-256 of raw bytes, lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex_encode(&hasher.finalize())
}

/// Stable identifier for a piece of text: SHA-256 truncated to 128 bits.
pub fn content_id(text: &str) -> String {
    sha256_hex(text.as_bytes())[..32].to_string()
}

/// Lowercase + collapse whitespace runs into single spaces. Duplicate
/// detection hashes normalized text so that cosmetic variants collide.
pub fn normalize_for_hash(text: &str) -> String {
    text.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Derive a 64-bit seed from a parent seed and a string label. Used to
/// give each pipeline site its own deterministic RNG stream.
pub fn derive_seed(parent: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    hasher.update(label.as_bytes());
    let out = hasher.finalize();
    u64::from_le_bytes(out[..8].try_into().unwrap())
}

fn hex_encode(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_collapses_case_and_whitespace() {
        assert_eq!(normalize_for_hash("A  b\t c\n"), "a b c");
        assert_eq!(normalize_for_hash("a b c"), normalize_for_hash("A B  C"));
    }

    #[test]
    fn content_id_is_stable_and_distinct() {
        assert_eq!(content_id("x"), content_id("x"));
        assert_ne!(content_id("x"), content_id("y"));
        assert_eq!(content_id("x").len(), 32);
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_eq!(derive_seed(1, "a"), derive_seed(1, "a"));
    }
}
