use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;

use super::{derive_rekey, KeyMgmtError, MemberCredential, Recipient, RekeyMessage, RekeyTranscript, Trigger, WrapKind};
use crate::crypto::{GroupKey, KeyDigest, Nonce, VerifiedChannel};
use crate::model::{GroupId, NodeId, NodeRecord};

/// Manager-side state of one group.
///
/// The manager holds, per member, only the digest `H(K_i)` and the wrap key
/// bound to itself. A manager that is the KDC has no digest of its own.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub id: GroupId,
    pub manager: NodeId,
    own_digest: Option<KeyDigest>,
    credentials: BTreeMap<NodeId, MemberCredential>,
    key: GroupKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LeaveOutcome {
    Rekeyed(RekeyTranscript),
    /// The manager left, or nobody but the manager is left. The caller
    /// re-forms groups over `remaining`.
    Dissolved {
        remaining: BTreeSet<NodeId>,
    },
}

fn random_nonce<R: RngCore + ?Sized>(rng: &mut R) -> Nonce {
    let mut n = [0u8; 16];
    rng.fill_bytes(&mut n);
    n
}

impl Group {
    pub fn new(
        id: GroupId,
        manager: NodeId,
        own_digest: Option<KeyDigest>,
        credentials: BTreeMap<NodeId, MemberCredential>,
        key: GroupKey,
    ) -> Result<Self, KeyMgmtError> {
        if credentials.contains_key(&manager) {
            return Err(KeyMgmtError::AlreadyMember(manager));
        }
        Ok(Self {
            id,
            manager,
            own_digest,
            credentials,
            key,
        })
    }

    pub fn key(&self) -> &GroupKey {
        &self.key
    }

    pub fn epoch(&self) -> u64 {
        self.key.epoch
    }

    /// Plain members, excluding the manager.
    pub fn members(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.credentials.keys().copied()
    }

    pub fn member_count(&self) -> usize {
        self.credentials.len()
    }

    pub fn is_member(&self, node: NodeId) -> bool {
        self.credentials.contains_key(&node)
    }

    /// Members plus the manager.
    pub fn contains(&self, node: NodeId) -> bool {
        node == self.manager || self.is_member(node)
    }

    pub fn credential_count(&self) -> usize {
        self.credentials.len()
    }

    fn participants(&self) -> Vec<(NodeId, KeyDigest)> {
        self.own_digest
            .map(|d| (self.manager, d))
            .into_iter()
            .chain(self.credentials.iter().map(|(&id, c)| (id, c.digest)))
            .collect()
    }

    fn rekey<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> Result<GroupKey, KeyMgmtError> {
        let beacon_nonce = random_nonce(rng);
        let key = derive_rekey(&beacon_nonce, self.key.epoch + 1, &self.participants())?;
        self.key = key.clone();
        Ok(key)
    }

    fn unicast_to_members<R: RngCore + ?Sized>(&self, rng: &mut R) -> Vec<RekeyMessage> {
        self.credentials
            .iter()
            .map(|(&id, c)| {
                RekeyMessage::seal(
                    Recipient::Node(id),
                    WrapKind::MemberSecretKey,
                    vec![id],
                    &c.wrap_key,
                    &self.key,
                    random_nonce(rng),
                )
            })
            .collect()
    }

    fn transcript(&self, trigger: Trigger, messages: Vec<RekeyMessage>) -> RekeyTranscript {
        RekeyTranscript {
            group: self.id,
            manager: self.manager,
            trigger,
            new_epoch: self.key.epoch,
            messages,
        }
    }

    /// Hands the freshly issued key to every member under its wrap key.
    pub fn distribute_issued<R: RngCore + ?Sized>(&self, rng: &mut R) -> RekeyTranscript {
        self.transcript(Trigger::Issue, self.unicast_to_members(rng))
    }
}

/// Admits `joiner` over its verified channel with the manager.
///
/// The joiner receives the new key under the channel key; the old members
/// receive it in one broadcast under the old group key, which the joiner
/// never held.
pub fn handle_join<R: RngCore + ?Sized>(
    group: &mut Group,
    joiner: &NodeRecord,
    credential: MemberCredential,
    channel: &VerifiedChannel,
    rng: &mut R,
) -> Result<RekeyTranscript, KeyMgmtError> {
    if joiner.is_blacklisted() {
        return Err(KeyMgmtError::Blacklisted(joiner.id));
    }
    if !channel.connects(joiner.id, group.manager) {
        return Err(KeyMgmtError::Unverified(joiner.id));
    }
    if group.contains(joiner.id) {
        return Err(KeyMgmtError::AlreadyMember(joiner.id));
    }
    let old_key = group.key.clone();
    let old_members: Vec<NodeId> = group.members().collect();
    group.credentials.insert(joiner.id, credential);
    let new_key = group.rekey(rng)?;

    let mut messages = vec![RekeyMessage::seal(
        Recipient::Node(joiner.id),
        WrapKind::DhChannel,
        vec![joiner.id],
        channel.key(),
        &new_key,
        random_nonce(rng),
    )];
    if !old_members.is_empty() {
        messages.push(RekeyMessage::seal(
            Recipient::Broadcast { group: group.id },
            WrapKind::OldGroupKey,
            old_members,
            &old_key.bytes,
            &new_key,
            random_nonce(rng),
        ));
    }
    Ok(group.transcript(Trigger::Join(joiner.id), messages))
}

/// Join as a flat, unclustered scheme does it: every member, the joiner
/// included, gets the new key individually under its wrap key.
pub fn flat_join<R: RngCore + ?Sized>(
    group: &mut Group,
    joiner: &NodeRecord,
    credential: MemberCredential,
    channel: &VerifiedChannel,
    rng: &mut R,
) -> Result<RekeyTranscript, KeyMgmtError> {
    if joiner.is_blacklisted() {
        return Err(KeyMgmtError::Blacklisted(joiner.id));
    }
    if !channel.connects(joiner.id, group.manager) {
        return Err(KeyMgmtError::Unverified(joiner.id));
    }
    if group.contains(joiner.id) {
        return Err(KeyMgmtError::AlreadyMember(joiner.id));
    }
    group.credentials.insert(joiner.id, credential);
    group.rekey(rng)?;
    let messages = group.unicast_to_members(rng);
    Ok(group.transcript(Trigger::Join(joiner.id), messages))
}

/// Removes `departing` and rekeys the survivors one by one under their
/// wrap keys, so nothing the departed node held opens the new key.
pub fn handle_leave<R: RngCore + ?Sized>(
    group: &mut Group,
    departing: NodeId,
    blacklisted: bool,
    rng: &mut R,
) -> Result<LeaveOutcome, KeyMgmtError> {
    if departing == group.manager {
        return Ok(LeaveOutcome::Dissolved {
            remaining: group.members().collect(),
        });
    }
    if group.credentials.remove(&departing).is_none() {
        return Err(KeyMgmtError::NotInGroup(departing));
    }
    if group.credentials.is_empty() {
        let remaining = Some(group.manager).filter(|m| !m.is_kdc()).into_iter().collect();
        return Ok(LeaveOutcome::Dissolved { remaining });
    }
    group.rekey(rng)?;
    let trigger = if blacklisted {
        Trigger::Blacklist(departing)
    } else {
        Trigger::Leave(departing)
    };
    let messages = group.unicast_to_members(rng);
    Ok(LeaveOutcome::Rekeyed(group.transcript(trigger, messages)))
}

/// Refreshes the key without a membership change: one broadcast under the
/// old group key.
pub fn periodic_rekey<R: RngCore + ?Sized>(group: &mut Group, rng: &mut R) -> Result<RekeyTranscript, KeyMgmtError> {
    let old_key = group.key.clone();
    let audience: Vec<NodeId> = group.members().collect();
    let new_key = group.rekey(rng)?;
    let msg = RekeyMessage::seal(
        Recipient::Broadcast { group: group.id },
        WrapKind::OldGroupKey,
        audience,
        &old_key.bytes,
        &new_key,
        random_nonce(rng),
    );
    Ok(group.transcript(Trigger::Periodic, vec![msg]))
}
