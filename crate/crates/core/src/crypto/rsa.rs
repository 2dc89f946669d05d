//! Device-bound RSA: key pairs whose primes are derived from the node
//! identity, textbook encryption, and a chunked byte wrap for small moduli.

use num_bigint::BigUint;
use num_traits::One;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::arith::{gcd, mod_inverse, mod_pow, to_fixed_be};
use super::prime::{is_probable_prime, next_prime};
use super::CryptoError;
use crate::model::NodeId;

pub const MIN_BITS: u32 = 16;
pub const DEFAULT_BITS: u32 = 512;
const MAX_REDRAWS: u32 = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RsaPublicKey {
    pub n: BigUint,
    pub k: BigUint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RsaPrivateKey {
    pub n: BigUint,
    pub l: BigUint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RsaKeyPair {
    u: BigUint,
    v: BigUint,
    pub n: BigUint,
    pub k: BigUint,
    pub l: BigUint,
}

#[derive(Serialize, Deserialize)]
struct PublicKeyJson {
    n: String,
    k: String,
}

impl Serialize for RsaPublicKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PublicKeyJson {
            n: self.n.to_str_radix(16),
            k: self.k.to_str_radix(16),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RsaPublicKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = PublicKeyJson::deserialize(d)?;
        let parse =
            |h: &str| BigUint::parse_bytes(h.as_bytes(), 16).ok_or_else(|| serde::de::Error::custom(format!("invalid hex integer {h:?}")));
        Ok(RsaPublicKey {
            n: parse(&raw.n)?,
            k: parse(&raw.k)?,
        })
    }
}

impl RsaKeyPair {
    /// Builds a key pair from two primes, choosing the smallest public
    /// exponent `k >= 3` coprime to `phi(n)`.
    pub fn from_primes(u: BigUint, v: BigUint) -> Result<Self, CryptoError> {
        let phi = totient(&u, &v)?;
        let mut k = BigUint::from(3u32);
        while k < phi {
            if gcd(&k, &phi).is_one() {
                return Self::from_primes_with_exponent(u, v, k);
            }
            k += 1u32;
        }
        Err(CryptoError::KeyGeneration("no public exponent below phi(n)".into()))
    }

    pub fn from_primes_with_exponent(u: BigUint, v: BigUint, k: BigUint) -> Result<Self, CryptoError> {
        let phi = totient(&u, &v)?;
        if k <= BigUint::one() || k >= phi {
            return Err(CryptoError::KeyGeneration("exponent outside (1, phi(n))".into()));
        }
        let l = mod_inverse(&k, &phi).ok_or_else(|| CryptoError::KeyGeneration("exponent not coprime to phi(n)".into()))?;
        let n = &u * &v;
        Ok(Self { u, v, n, k, l })
    }

    pub fn primes(&self) -> (&BigUint, &BigUint) {
        (&self.u, &self.v)
    }

    pub fn phi(&self) -> BigUint {
        (&self.u - 1u32) * (&self.v - 1u32)
    }

    pub fn public(&self) -> RsaPublicKey {
        RsaPublicKey {
            n: self.n.clone(),
            k: self.k.clone(),
        }
    }

    pub fn private(&self) -> RsaPrivateKey {
        RsaPrivateKey {
            n: self.n.clone(),
            l: self.l.clone(),
        }
    }
}

fn totient(u: &BigUint, v: &BigUint) -> Result<BigUint, CryptoError> {
    if u == v {
        return Err(CryptoError::KeyGeneration("primes must be distinct".into()));
    }
    if !is_probable_prime(u) || !is_probable_prime(v) {
        return Err(CryptoError::KeyGeneration("factors must be prime".into()));
    }
    Ok((u - 1u32) * (v - 1u32))
}

/// Prime candidate for draw `counter` of a device: the top `half_bits`-bit
/// window of `SHA-256(id || counter)`, with the high bit forced so the
/// modulus reaches the requested size.
fn device_prime(device_id: NodeId, counter: u32, half_bits: u32) -> BigUint {
    let mut h = Sha256::new();
    h.update(device_id.0.to_be_bytes());
    h.update(counter.to_be_bytes());
    let digest = h.finalize();
    let mut x = BigUint::from_bytes_be(&digest);
    // For half widths beyond one digest, stretch by re-hashing.
    let mut block = 1u32;
    while x.bits() < half_bits as u64 + 64 {
        let mut h = Sha256::new();
        h.update(device_id.0.to_be_bytes());
        h.update(counter.to_be_bytes());
        h.update(block.to_be_bytes());
        x = (x << 256u32) | BigUint::from_bytes_be(&h.finalize());
        block += 1;
    }
    let mask = (BigUint::one() << half_bits) - 1u32;
    let mut start = x & mask;
    start.set_bit(half_bits as u64 - 1, true);
    next_prime(&start)
}

/// Deterministic per-device key generation.
pub fn drsa_keygen(device_id: NodeId, bit_length: u32) -> Result<RsaKeyPair, CryptoError> {
    if bit_length < MIN_BITS {
        return Err(CryptoError::KeySizeTooSmall {
            bits: bit_length,
            min: MIN_BITS,
        });
    }
    let half = bit_length / 2;
    let u = device_prime(device_id, 0, half);
    let mut counter = 1;
    let v = loop {
        let v = device_prime(device_id, counter, half);
        if v != u {
            break v;
        }
        counter += 1;
        if counter > MAX_REDRAWS {
            return Err(CryptoError::KeyGeneration("could not draw two distinct primes".into()));
        }
    };
    RsaKeyPair::from_primes(u, v)
}

pub fn rsa_encrypt(m: &BigUint, key: &RsaPublicKey) -> Result<BigUint, CryptoError> {
    if m >= &key.n {
        return Err(CryptoError::MessageOutOfRange);
    }
    Ok(mod_pow(m, &key.k, &key.n))
}

pub fn rsa_decrypt(c: &BigUint, key: &RsaPrivateKey) -> Result<BigUint, CryptoError> {
    if c >= &key.n {
        return Err(CryptoError::MessageOutOfRange);
    }
    Ok(mod_pow(c, &key.l, &key.n))
}

/// Plaintext bytes per chunk: every chunk integer stays below `n`.
fn chunk_len(n: &BigUint) -> Result<usize, CryptoError> {
    let len = ((n.bits() - 1) / 8) as usize;
    if len == 0 {
        return Err(CryptoError::KeySizeTooSmall {
            bits: n.bits() as u32,
            min: 9,
        });
    }
    Ok(len)
}

fn modulus_len(n: &BigUint) -> usize {
    n.bits().div_ceil(8) as usize
}

/// Encrypts arbitrary bytes as a sequence of big-endian chunks, each below
/// the modulus. Layout: `u32 total_len`, then per chunk `u16 len || c`.
pub fn seal_chunked(data: &[u8], key: &RsaPublicKey) -> Result<Vec<u8>, CryptoError> {
    let step = chunk_len(&key.n)?;
    let width = modulus_len(&key.n);
    let mut out = Vec::with_capacity(4 + data.len().div_ceil(step) * (2 + width));
    out.extend_from_slice(&(data.len() as u32).to_be_bytes());
    for chunk in data.chunks(step) {
        let c = rsa_encrypt(&BigUint::from_bytes_be(chunk), key)?;
        out.extend_from_slice(&(width as u16).to_be_bytes());
        out.extend_from_slice(&to_fixed_be(&c, width));
    }
    Ok(out)
}

pub fn open_chunked(sealed: &[u8], key: &RsaPrivateKey) -> Result<Vec<u8>, CryptoError> {
    let step = chunk_len(&key.n)?;
    let (head, mut rest) = sealed.split_at_checked(4).ok_or(CryptoError::Malformed("missing length"))?;
    let total = u32::from_be_bytes(head.try_into().unwrap()) as usize;
    let mut out = Vec::with_capacity(total);
    while out.len() < total {
        let (len_bytes, tail) = rest.split_at_checked(2).ok_or(CryptoError::Malformed("truncated chunk"))?;
        let clen = u16::from_be_bytes(len_bytes.try_into().unwrap()) as usize;
        let (c_bytes, tail) = tail.split_at_checked(clen).ok_or(CryptoError::Malformed("truncated chunk"))?;
        rest = tail;
        let want = step.min(total - out.len());
        let m = rsa_decrypt(&BigUint::from_bytes_be(c_bytes), key)?;
        if m.bits() > (want * 8) as u64 {
            return Err(CryptoError::Malformed("chunk does not decode under this key"));
        }
        out.extend_from_slice(&to_fixed_be(&m, want));
    }
    if !rest.is_empty() {
        return Err(CryptoError::Malformed("trailing bytes"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn textbook_pair() {
        let kp = RsaKeyPair::from_primes_with_exponent(61u32.into(), 53u32.into(), 17u32.into()).unwrap();
        assert_eq!(kp.n, BigUint::from(3233u32));
        assert_eq!(kp.phi(), BigUint::from(3120u32));
        assert_eq!(kp.l, BigUint::from(2753u32));
        // independent check: brute scan for the unique l in [1, phi) with 17 l = 1 mod phi
        let brute = (1u32..3120).find(|l| (17 * l) % 3120 == 1).unwrap();
        assert_eq!(kp.l, BigUint::from(brute));

        assert_eq!(rsa_encrypt(&65u32.into(), &kp.public()).unwrap(), BigUint::from(2790u32));
        assert_eq!(rsa_decrypt(&2790u32.into(), &kp.private()).unwrap(), BigUint::from(65u32));
        assert_eq!(rsa_encrypt(&0u32.into(), &kp.public()).unwrap(), BigUint::from(0u32));
        assert_eq!(rsa_encrypt(&1u32.into(), &kp.public()).unwrap(), BigUint::from(1u32));
        assert_eq!(rsa_decrypt(&1u32.into(), &kp.private()).unwrap(), BigUint::from(1u32));
        assert_eq!(rsa_encrypt(&3233u32.into(), &kp.public()), Err(CryptoError::MessageOutOfRange));
        assert_eq!(rsa_decrypt(&4000u32.into(), &kp.private()), Err(CryptoError::MessageOutOfRange));
    }

    #[test]
    fn smallest_coprime_exponent() {
        // phi = 3120 = 2^4 * 3 * 5 * 13, so 3 and 5 are skipped
        let kp = RsaKeyPair::from_primes(61u32.into(), 53u32.into()).unwrap();
        assert_eq!(kp.k, BigUint::from(7u32));
    }

    #[test]
    fn rejects_equal_or_composite_factors() {
        assert!(RsaKeyPair::from_primes(61u32.into(), 61u32.into()).is_err());
        assert!(RsaKeyPair::from_primes(61u32.into(), 55u32.into()).is_err());
        assert!(RsaKeyPair::from_primes_with_exponent(61u32.into(), 53u32.into(), 6u32.into()).is_err());
    }

    #[test]
    fn keygen_is_deterministic_and_valid() {
        for id in 0..50 {
            let a = drsa_keygen(NodeId(id), 32).unwrap();
            let b = drsa_keygen(NodeId(id), 32).unwrap();
            assert_eq!(a, b);
            let (u, v) = a.primes();
            assert_ne!(u, v);
            assert!(is_probable_prime(u) && is_probable_prime(v));
            assert!(((&a.k * &a.l) % a.phi()).is_one());
            assert_eq!(u.bits(), 16);
        }
        assert_ne!(drsa_keygen(NodeId(1), 32).unwrap(), drsa_keygen(NodeId(2), 32).unwrap());
    }

    #[test]
    fn keygen_bit_floor() {
        assert!(matches!(drsa_keygen(NodeId(1), 8), Err(CryptoError::KeySizeTooSmall { .. })));
        assert!(drsa_keygen(NodeId(1), 16).is_ok());
    }

    #[test]
    fn redraw_when_primes_collide() {
        // At 16 bits both draws land on 8-bit primes in [128, 256); some
        // device ids collide on the first two draws and must redraw.
        let colliding = (0..5000u32)
            .find(|&id| device_prime(NodeId(id), 0, 8) == device_prime(NodeId(id), 1, 8))
            .expect("a collision exists among 8-bit draws");
        let kp = drsa_keygen(NodeId(colliding), 16).unwrap();
        let (u, v) = kp.primes();
        assert_ne!(u, v);
    }

    #[test]
    fn exhaustive_roundtrip_small_modulus() {
        let kp = RsaKeyPair::from_primes(251u32.into(), 241u32.into()).unwrap();
        let n = 251u32 * 241;
        for m in 0..n {
            let m = BigUint::from(m);
            let c = rsa_encrypt(&m, &kp.public()).unwrap();
            assert_eq!(rsa_decrypt(&c, &kp.private()).unwrap(), m);
        }
    }

    #[test]
    fn chunked_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for bits in [16, 32, 64, 512] {
            let kp = drsa_keygen(NodeId(bits), bits).unwrap();
            for len in [0usize, 1, 2, 31, 32, 33, 100] {
                let data: Vec<u8> = (0..len).map(|_| rng.random()).collect();
                let sealed = seal_chunked(&data, &kp.public()).unwrap();
                assert_eq!(open_chunked(&sealed, &kp.private()).unwrap(), data);
            }
        }
        let data = [0u8, 0, 0, 7];
        let kp = drsa_keygen(NodeId(3), 32).unwrap();
        let sealed = seal_chunked(&data, &kp.public()).unwrap();
        assert_eq!(open_chunked(&sealed, &kp.private()).unwrap(), data);
        assert!(open_chunked(&sealed[..sealed.len() - 1], &kp.private()).is_err());
    }

    #[test]
    fn public_key_json() {
        let kp = RsaKeyPair::from_primes_with_exponent(61u32.into(), 53u32.into(), 17u32.into()).unwrap();
        let j = serde_json::to_value(kp.public()).unwrap();
        assert_eq!(j, serde_json::json!({"n": "ca1", "k": "11"}));
        let back: RsaPublicKey = serde_json::from_value(j).unwrap();
        assert_eq!(back, kp.public());
    }
}
