use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a sequence of fields, length-prefixed so field boundaries
/// cannot be shifted to forge a collision.
pub fn fields_digest(fields: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for f in fields {
        hasher.update((f.len() as u64).to_le_bytes());
        hasher.update(f.as_bytes());
    }
    hex::encode(hasher.finalize())
}
