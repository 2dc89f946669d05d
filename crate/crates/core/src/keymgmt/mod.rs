//! Key distribution center, group-manager key distribution, and the rekey
//! engine behind joins, leaves, blacklisting and periodic refresh.

mod group;
mod kdc;
mod keyring;

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crypto::{sym_decrypt, sym_encrypt, CryptoError, GroupKey, KeyDigest, Nonce, SymKey};
use crate::model::{GroupId, NodeId};

pub use group::{flat_join, handle_join, handle_leave, periodic_rekey, Group, LeaveOutcome};
pub use kdc::{GroupKeyEnvelope, Kdc, MemberCredential};
pub use keyring::KeyRing;

const REKEY_LABEL: &[u8] = b"HT-RCF-rekey";

/// Group id and epoch carried in clear ahead of every key message.
pub const MESSAGE_HEADER_LEN: u64 = 12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KeyMgmtError {
    #[error("node {0} is not registered with the KDC")]
    NotRegistered(NodeId),
    #[error("node {0} is already registered")]
    AlreadyRegistered(NodeId),
    #[error("node {0} is blacklisted")]
    Blacklisted(NodeId),
    #[error("node {0} has no verified channel with the manager")]
    Unverified(NodeId),
    #[error("node {0} is already in the group")]
    AlreadyMember(NodeId),
    #[error("node {0} is not in the group")]
    NotInGroup(NodeId),
    #[error("no credential for member {0}")]
    MissingCredential(NodeId),
    #[error("rekey requires at least one member")]
    EmptyMemberSet,
    #[error("group {group}: epoch {got} does not follow {current}")]
    EpochRegression { group: GroupId, current: u64, got: u64 },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Derives a group key from a fresh beacon nonce, the new epoch and the
/// digests `H(K_i)` of every participant.
///
/// Participants are sorted by id first, so input order does not matter.
/// Only the derived key ever leaves the manager; the nonce and digests are
/// never transmitted.
pub fn derive_rekey(beacon_nonce: &[u8], epoch: u64, participants: &[(NodeId, KeyDigest)]) -> Result<GroupKey, KeyMgmtError> {
    if participants.is_empty() {
        return Err(KeyMgmtError::EmptyMemberSet);
    }
    let mut sorted = participants.to_vec();
    sorted.sort_by_key(|(id, _)| *id);
    let mut h = Sha256::new();
    h.update(REKEY_LABEL);
    h.update(beacon_nonce);
    h.update(epoch.to_be_bytes());
    for (_, d) in &sorted {
        h.update(d.0);
    }
    Ok(GroupKey {
        bytes: h.finalize().into(),
        epoch,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Trigger {
    /// Fresh key from the KDC for a newly formed group.
    Issue,
    Join(NodeId),
    Leave(NodeId),
    Blacklist(NodeId),
    Periodic,
}

impl Trigger {
    pub fn departing(self) -> Option<NodeId> {
        match self {
            Trigger::Leave(n) | Trigger::Blacklist(n) => Some(n),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum WrapKind {
    OldGroupKey,
    MemberSecretKey,
    DhChannel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum Recipient {
    Node(NodeId),
    Broadcast { group: GroupId },
}

/// A group key sealed for one recipient or for the whole old group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RekeyMessage {
    pub to: Recipient,
    pub wrap: WrapKind,
    /// Nodes that receive the message.
    pub audience: Vec<NodeId>,
    pub nonce: Nonce,
    pub ciphertext: Vec<u8>,
}

impl RekeyMessage {
    pub(crate) fn seal(to: Recipient, wrap: WrapKind, audience: Vec<NodeId>, key: &SymKey, payload: &GroupKey, nonce: Nonce) -> Self {
        Self {
            to,
            wrap,
            audience,
            nonce,
            ciphertext: sym_encrypt(key, &nonce, &payload.to_wire()),
        }
    }

    pub fn open(&self, key: &SymKey) -> Result<GroupKey, CryptoError> {
        GroupKey::from_wire(&sym_decrypt(key, &self.nonce, &self.ciphertext)?)
    }

    /// Bytes on the air: header, nonce and sealed payload.
    pub fn wire_len(&self) -> u64 {
        MESSAGE_HEADER_LEN + self.nonce.len() as u64 + self.ciphertext.len() as u64
    }
}

/// Everything one rekey event put on the air.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RekeyTranscript {
    pub group: GroupId,
    pub manager: NodeId,
    pub trigger: Trigger,
    pub new_epoch: u64,
    pub messages: Vec<RekeyMessage>,
}

impl RekeyTranscript {
    pub fn total_bytes(&self) -> u64 {
        self.messages.iter().map(RekeyMessage::wire_len).sum()
    }

    /// `{trigger, epoch, messages: [{to, wrap, bytes_len}]}`; ciphertexts
    /// are included only when `full` is set.
    pub fn to_json(&self, full: bool) -> serde_json::Value {
        let messages: Vec<_> = self
            .messages
            .iter()
            .map(|m| {
                let mut v = json!({"to": m.to, "wrap": m.wrap, "bytes_len": m.wire_len()});
                if full {
                    v["nonce"] = json!(hex::encode(m.nonce));
                    v["ciphertext"] = json!(hex::encode(&m.ciphertext));
                }
                v
            })
            .collect();
        json!({
            "group": self.group,
            "trigger": self.trigger,
            "epoch": self.new_epoch,
            "messages": messages,
        })
    }
}
