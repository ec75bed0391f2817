//! SHA-256 digest helpers shared by caches, artifact files, and the db format.

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of the given bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

/// Digest of a serialized label list; identifies one inventory ordering.
pub fn label_list_digest(labels: &[String]) -> String {
    let serialized = serde_json::to_string(labels).expect("label list serializes");
    sha256_hex(serialized.as_bytes())
}
