//! Deterministic RNG streams and content hashing.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by the run
//! seed plus a description of the work item (problem id, prefix length, ...),
//! so results do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Derives an independent stream for `(seed, tag, parts...)`.
pub fn stream(seed: u64, tag: &str, parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag.as_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Stream for a `(problem, position)` work item.
pub fn item_stream(seed: u64, tag: &str, problem_id: &str, position: u64) -> ChaCha8Rng {
    stream(seed, tag, &[problem_id.as_bytes(), &position.to_le_bytes()])
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of the compact JSON serialization of `value`. Struct fields
/// serialize in declaration order, so this is stable for a fixed type.
pub fn json_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("in-memory values serialize");
    sha256_hex(&bytes)
}
