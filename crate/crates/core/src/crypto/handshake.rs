//! Pairwise key verification over an ephemeral Diffie–Hellman exchange.
//!
//! Four messages:
//!
//! 1. initiator -> responder: `M`
//! 2. responder -> initiator: `N || E_k(C_r)`
//! 3. initiator -> responder: `E_k(C_i || H(C_r))`
//! 4. responder -> initiator: `E_k(H(C_i))`
//!
//! where `k` is derived from each side's own view of `Key_MN`. An honest
//! party aborts on the first check that fails and names its peer as the
//! suspect. A misbehaving party never aborts; it only lies.

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dh::{dh_keypair, dh_shared, DhParams};
use super::sym::{sym_decrypt, sym_encrypt, Nonce, SymKey, NONCE_LEN, TAG_LEN};
use crate::model::NodeId;

const CHALLENGE_LEN: usize = 32;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PeerBehavior {
    #[default]
    Honest,
    /// Uses a random session key instead of the agreed one.
    SubstituteKey,
    /// Announces the public value 1.
    DegeneratePublic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Peer {
    pub id: NodeId,
    pub behavior: PeerBehavior,
}

impl Peer {
    pub fn honest(id: NodeId) -> Self {
        Self {
            id,
            behavior: PeerBehavior::Honest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WireMessage {
    pub from: NodeId,
    pub to: NodeId,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RejectReason {
    DegenerateKey,
    PublicOutOfRange,
    Unauthenticated,
    ChallengeMismatch,
}

/// An authenticated pairwise channel. Only obtainable from a verified
/// handshake.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifiedChannel {
    initiator: NodeId,
    responder: NodeId,
    key: SymKey,
}

impl VerifiedChannel {
    pub fn initiator(&self) -> NodeId {
        self.initiator
    }

    pub fn responder(&self) -> NodeId {
        self.responder
    }

    pub fn key(&self) -> &SymKey {
        &self.key
    }

    pub fn connects(&self, a: NodeId, b: NodeId) -> bool {
        (self.initiator == a && self.responder == b) || (self.initiator == b && self.responder == a)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HandshakeOutcome {
    Verified(VerifiedChannel),
    Rejected {
        /// Honest party whose check failed.
        detected_by: NodeId,
        /// Peer that party labels dangerous.
        suspect: NodeId,
        reason: RejectReason,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Handshake {
    pub outcome: HandshakeOutcome,
    pub messages: Vec<WireMessage>,
}

impl Handshake {
    pub fn is_verified(&self) -> bool {
        matches!(self.outcome, HandshakeOutcome::Verified(_))
    }

    pub fn total_bytes(&self) -> u64 {
        self.messages.iter().map(|m| m.bytes).sum()
    }
}

pub fn session_key(params: &DhParams, shared: &BigUint) -> SymKey {
    let mut h = Sha256::new();
    h.update(b"dh-session");
    h.update(params.encode(shared));
    h.finalize().into()
}

fn random_array<const N: usize, R: RngCore + ?Sized>(rng: &mut R) -> [u8; N] {
    let mut b = [0u8; N];
    rng.fill_bytes(&mut b);
    b
}

fn digest(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

struct Side {
    peer: Peer,
    key: Option<SymKey>,
}

impl Side {
    fn honest(&self) -> bool {
        self.peer.behavior == PeerBehavior::Honest
    }
}

/// Runs the exchange between two nodes and reports whether both views of
/// the shared key match.
pub fn verify_handshake<R: RngCore + ?Sized>(initiator: Peer, responder: Peer, params: &DhParams, rng: &mut R) -> Handshake {
    let elem = params.element_len() as u64;
    let sealed = |n: usize| (NONCE_LEN + n + TAG_LEN) as u64;
    let mut messages = Vec::with_capacity(4);
    let reject = |messages: Vec<WireMessage>, detected_by: &Side, suspect: &Side, reason| Handshake {
        outcome: HandshakeOutcome::Rejected {
            detected_by: detected_by.peer.id,
            suspect: suspect.peer.id,
            reason,
        },
        messages,
    };

    let a = dh_keypair(params, rng);
    let b = dh_keypair(params, rng);
    let announced = |peer: Peer, public: &BigUint| match peer.behavior {
        PeerBehavior::DegeneratePublic => BigUint::one(),
        _ => public.clone(),
    };
    let m_pub = announced(initiator, &a.public);
    let n_pub = announced(responder, &b.public);

    let mut init = Side {
        peer: initiator,
        key: None,
    };
    let mut resp = Side {
        peer: responder,
        key: None,
    };

    // Each side derives its own view of Key_MN.
    for (side, own, other) in [(&mut init, &a, &n_pub), (&mut resp, &b, &m_pub)] {
        side.key = match dh_shared(own, other, params) {
            Ok(s) if s.is_zero() || s.is_one() => None,
            Ok(s) => Some(match side.peer.behavior {
                PeerBehavior::SubstituteKey => random_array(rng),
                _ => session_key(params, &s),
            }),
            Err(_) => None,
        };
    }

    // 1
    messages.push(WireMessage {
        from: initiator.id,
        to: responder.id,
        bytes: elem,
    });
    let resp_key = match resp.key {
        Some(k) => k,
        None if resp.honest() => return reject(messages, &resp, &init, RejectReason::DegenerateKey),
        None => random_array(rng),
    };

    // 2
    let c_r: [u8; CHALLENGE_LEN] = random_array(rng);
    let nonce2: Nonce = random_array(rng);
    let msg2 = sym_encrypt(&resp_key, &nonce2, &c_r);
    messages.push(WireMessage {
        from: responder.id,
        to: initiator.id,
        bytes: elem + sealed(CHALLENGE_LEN),
    });
    let init_key = match init.key {
        Some(k) => k,
        None if init.honest() => return reject(messages, &init, &resp, RejectReason::DegenerateKey),
        None => random_array(rng),
    };
    let seen_c_r = match sym_decrypt(&init_key, &nonce2, &msg2) {
        Ok(c) => c,
        Err(_) if init.honest() => return reject(messages, &init, &resp, RejectReason::Unauthenticated),
        Err(_) => c_r.to_vec(),
    };

    // 3
    let c_i: [u8; CHALLENGE_LEN] = random_array(rng);
    let nonce3: Nonce = random_array(rng);
    let mut body3 = c_i.to_vec();
    body3.extend_from_slice(&digest(&seen_c_r));
    let msg3 = sym_encrypt(&init_key, &nonce3, &body3);
    messages.push(WireMessage {
        from: initiator.id,
        to: responder.id,
        bytes: sealed(2 * CHALLENGE_LEN),
    });
    let seen_c_i = match sym_decrypt(&resp_key, &nonce3, &msg3) {
        Ok(p) => {
            let (ci, proof) = p.split_at(CHALLENGE_LEN);
            if resp.honest() && proof != digest(&c_r) {
                return reject(messages, &resp, &init, RejectReason::ChallengeMismatch);
            }
            ci.to_vec()
        }
        Err(_) if resp.honest() => return reject(messages, &resp, &init, RejectReason::Unauthenticated),
        Err(_) => c_i.to_vec(),
    };

    // 4
    let nonce4: Nonce = random_array(rng);
    let msg4 = sym_encrypt(&resp_key, &nonce4, &digest(&seen_c_i));
    messages.push(WireMessage {
        from: responder.id,
        to: initiator.id,
        bytes: sealed(32),
    });
    match sym_decrypt(&init_key, &nonce4, &msg4) {
        Ok(proof) if proof == digest(&c_i) => {}
        Ok(_) if init.honest() => return reject(messages, &init, &resp, RejectReason::ChallengeMismatch),
        Err(_) if init.honest() => return reject(messages, &init, &resp, RejectReason::Unauthenticated),
        _ => {}
    }

    if init_key != resp_key {
        // Both parties misbehaved; neither honest check ran.
        return reject(messages, &resp, &init, RejectReason::Unauthenticated);
    }
    Handshake {
        outcome: HandshakeOutcome::Verified(VerifiedChannel {
            initiator: initiator.id,
            responder: responder.id,
            key: init_key,
        }),
        messages,
    }
}
