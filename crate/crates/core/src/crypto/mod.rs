//! Cryptographic primitives. Textbook constructions, deliberately without
//! padding or constant-time guarantees; not for production use.

pub mod arith;
pub mod dh;
pub mod handshake;
pub mod prime;
pub mod rsa;
pub mod sym;

use std::fmt;

use rand::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::NodeId;

pub use dh::{dh_keypair, dh_shared, DhKeyPair, DhParams, DhParamsId};
pub use handshake::{verify_handshake, Handshake, HandshakeOutcome, Peer, PeerBehavior, VerifiedChannel};
pub use rsa::{drsa_keygen, rsa_decrypt, rsa_encrypt, RsaKeyPair, RsaPrivateKey, RsaPublicKey};
pub use sym::{sym_decrypt, sym_encrypt, Nonce, SymKey};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("key size {bits} bits is below the minimum of {min}")]
    KeySizeTooSmall { bits: u32, min: u32 },
    #[error("key generation failed: {0}")]
    KeyGeneration(String),
    #[error("value must be smaller than the modulus")]
    MessageOutOfRange,
    #[error("peer public value out of range")]
    PublicOutOfRange,
    #[error("invalid parameters: {0}")]
    InvalidParams(&'static str),
    #[error("unauthenticated ciphertext")]
    Unauthenticated,
    #[error("malformed ciphertext: {0}")]
    Malformed(&'static str),
}

/// Per-node long-term secret shared with the KDC.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SecretKey([u8; 32]);

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecretKey({}..)", hex::encode(&self.0[..4]))
    }
}

impl SecretKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut b = [0u8; 32];
        rng.fill_bytes(&mut b);
        Self(b)
    }

    pub fn bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// `H(K_i)`, the only form of the secret that enters rekey derivation.
    pub fn digest(&self) -> KeyDigest {
        KeyDigest(Sha256::digest(self.0).into())
    }

    /// Pairwise wrap key between this node and one manager. A manager only
    /// ever learns the wrap keys bound to itself, never `K_i`.
    pub fn bound_to(&self, manager: NodeId) -> SymKey {
        let mut h = Sha256::new();
        h.update(b"member-wrap");
        h.update(self.0);
        h.update(manager.0.to_be_bytes());
        h.finalize().into()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyDigest(pub [u8; 32]);

impl fmt::Debug for KeyDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyDigest({}..)", hex::encode(&self.0[..4]))
    }
}

/// One generation of a group key.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct GroupKey {
    pub bytes: [u8; 32],
    pub epoch: u64,
}

impl fmt::Debug for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupKey(epoch {}, {}..)", self.epoch, hex::encode(&self.bytes[..4]))
    }
}

impl GroupKey {
    pub const WIRE_LEN: usize = 40;

    /// `epoch (u64 BE) || key bytes`.
    pub fn to_wire(&self) -> [u8; Self::WIRE_LEN] {
        let mut out = [0u8; Self::WIRE_LEN];
        out[..8].copy_from_slice(&self.epoch.to_be_bytes());
        out[8..].copy_from_slice(&self.bytes);
        out
    }

    pub fn from_wire(b: &[u8]) -> Result<Self, CryptoError> {
        if b.len() != Self::WIRE_LEN {
            return Err(CryptoError::Malformed("group key length"));
        }
        let mut bytes = [0u8; 32];
        bytes.copy_from_slice(&b[8..]);
        Ok(Self {
            epoch: u64::from_be_bytes(b[..8].try_into().unwrap()),
            bytes,
        })
    }
}
