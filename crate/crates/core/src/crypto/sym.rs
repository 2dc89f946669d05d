//! Hash-based stream cipher with a truncated-hash tag, used for all
//! group-key traffic.
//!
//! Keystream block `i` is `SHA-256(key || nonce || i)` with `i` as a
//! big-endian `u64`; the tag is the first 16 bytes of
//! `SHA-256(key || nonce || "mac" || ciphertext)`, appended to the
//! ciphertext.

use sha2::{Digest, Sha256};

use super::CryptoError;

pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 16;
pub const TAG_LEN: usize = 16;

pub type SymKey = [u8; KEY_LEN];
pub type Nonce = [u8; NONCE_LEN];

fn apply_keystream(key: &SymKey, nonce: &Nonce, data: &mut [u8]) {
    for (i, chunk) in data.chunks_mut(32).enumerate() {
        let mut h = Sha256::new();
        h.update(key);
        h.update(nonce);
        h.update((i as u64).to_be_bytes());
        let block = h.finalize();
        for (b, k) in chunk.iter_mut().zip(block.iter()) {
            *b ^= k;
        }
    }
}

fn tag(key: &SymKey, nonce: &Nonce, ciphertext: &[u8]) -> [u8; TAG_LEN] {
    let mut h = Sha256::new();
    h.update(key);
    h.update(nonce);
    h.update(b"mac");
    h.update(ciphertext);
    let full = h.finalize();
    let mut t = [0u8; TAG_LEN];
    t.copy_from_slice(&full[..TAG_LEN]);
    t
}

pub fn sym_encrypt(key: &SymKey, nonce: &Nonce, plaintext: &[u8]) -> Vec<u8> {
    let mut out = plaintext.to_vec();
    apply_keystream(key, nonce, &mut out);
    let t = tag(key, nonce, &out);
    out.extend_from_slice(&t);
    out
}

pub fn sym_decrypt(key: &SymKey, nonce: &Nonce, sealed: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if sealed.len() < TAG_LEN {
        return Err(CryptoError::Unauthenticated);
    }
    let (body, t) = sealed.split_at(sealed.len() - TAG_LEN);
    if tag(key, nonce, body) != t {
        return Err(CryptoError::Unauthenticated);
    }
    let mut out = body.to_vec();
    apply_keystream(key, nonce, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_plaintext_is_tag_only() {
        let key = [7u8; 32];
        let nonce = [1u8; 16];
        let c = sym_encrypt(&key, &nonce, b"");
        assert_eq!(c.len(), TAG_LEN);
        assert_eq!(sym_decrypt(&key, &nonce, &c).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn large_roundtrip() {
        let key = [3u8; 32];
        let nonce = [9u8; 16];
        let p: Vec<u8> = (0..64 * 1024).map(|i| (i * 31 % 251) as u8).collect();
        let c = sym_encrypt(&key, &nonce, &p);
        assert_eq!(c.len(), p.len() + TAG_LEN);
        assert_eq!(sym_decrypt(&key, &nonce, &c).unwrap(), p);
    }

    #[test]
    fn wrong_key_and_short_input() {
        let c = sym_encrypt(&[1; 32], &[0; 16], b"hello");
        assert_eq!(sym_decrypt(&[2; 32], &[0; 16], &c), Err(CryptoError::Unauthenticated));
        assert_eq!(sym_decrypt(&[1; 32], &[1; 16], &c), Err(CryptoError::Unauthenticated));
        assert_eq!(sym_decrypt(&[1; 32], &[0; 16], &c[..3]), Err(CryptoError::Unauthenticated));
    }

    proptest! {
        #[test]
        fn roundtrip(key in any::<[u8; 32]>(), nonce in any::<[u8; 16]>(), p in proptest::collection::vec(any::<u8>(), 0..2048)) {
            let c = sym_encrypt(&key, &nonce, &p);
            prop_assert_eq!(c.len(), p.len() + TAG_LEN);
            prop_assert_eq!(sym_decrypt(&key, &nonce, &c).unwrap(), p);
        }

        #[test]
        fn bit_flip_rejected(key in any::<[u8; 32]>(), p in proptest::collection::vec(any::<u8>(), 0..256), pos in any::<prop::sample::Index>(), bit in 0u8..8) {
            let nonce = [5u8; 16];
            let mut c = sym_encrypt(&key, &nonce, &p);
            let i = pos.index(c.len());
            c[i] ^= 1 << bit;
            prop_assert_eq!(sym_decrypt(&key, &nonce, &c), Err(CryptoError::Unauthenticated));
        }

        #[test]
        fn distinct_nonces_distinct_ciphertexts(key in any::<[u8; 32]>(), n1 in any::<[u8; 16]>(), n2 in any::<[u8; 16]>(), p in proptest::collection::vec(any::<u8>(), 1..128)) {
            prop_assume!(n1 != n2);
            prop_assert_ne!(sym_encrypt(&key, &n1, &p), sym_encrypt(&key, &n2, &p));
        }
    }
}
