//! Content hashes and seed derivation.

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 over the given byte strings, each length-prefixed so
/// that different splits of the same bytes hash differently.
pub fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

/// A 64-bit seed derived from a base seed and a label.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        // sha256 of the 8 zero bytes of a zero length prefix
        assert_eq!(sha256_hex(&[b""]), "af5570f5a1810b7af78caf4bc70a660f0df51e42baf91d4de5b2328de0e83dfc");
        assert_ne!(sha256_hex(&[b"ab", b"c"]), sha256_hex(&[b"a", b"bc"]));
    }

    #[test]
    fn seeds_differ_by_label() {
        assert_eq!(derive_seed(7, "p1"), derive_seed(7, "p1"));
        assert_ne!(derive_seed(7, "p1"), derive_seed(7, "p2"));
        assert_ne!(derive_seed(7, "p1"), derive_seed(8, "p1"));
    }
}
