//! Project-wide hash choices: SHA-256 for digests and key derivation,
//! HMAC-SHA-256 for proofs, and a SHA-256 counter-mode keystream.

use hmac::{Hmac, Mac};
use sha2::{Digest, Sha256};

pub type Digest32 = [u8; 32];

pub fn sha256(parts: &[&[u8]]) -> Digest32 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

pub fn hmac_sha256(key: &[u8], parts: &[&[u8]]) -> Digest32 {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("hmac accepts any key length");
    for p in parts {
        mac.update(p);
    }
    mac.finalize().into_bytes().into()
}

/// Constant-time tag comparison.
pub fn tags_equal(a: &[u8], b: &[u8]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// XORs `data` in place with `SHA-256(key || counter_be32)` blocks.
/// Applying it twice with the same key restores the input.
pub fn keystream_xor(key: &[u8], data: &mut [u8]) {
    for (counter, chunk) in data.chunks_mut(32).enumerate() {
        let block = sha256(&[key, &(counter as u32).to_be_bytes()]);
        for (b, k) in chunk.iter_mut().zip(block.iter()) {
            *b ^= k;
        }
    }
}
