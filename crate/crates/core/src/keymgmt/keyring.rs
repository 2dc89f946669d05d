use std::collections::BTreeMap;

use super::{KeyMgmtError, RekeyMessage, WrapKind};
use crate::crypto::sym::KEY_LEN;
use crate::crypto::{GroupKey, SecretKey, SymKey};
use crate::model::{GroupId, NodeId};

/// Node-side key store.
///
/// Besides the keys a node currently holds, it remembers every symmetric key
/// it ever held so secrecy checks can replay them.
#[derive(Debug, Clone)]
pub struct KeyRing {
    owner: NodeId,
    secret: SecretKey,
    current: Option<(GroupId, NodeId, GroupKey)>,
    channels: BTreeMap<NodeId, SymKey>,
    history: Vec<SymKey>,
}

impl KeyRing {
    pub fn new(owner: NodeId, secret: SecretKey) -> Self {
        let history = vec![*secret.bytes()];
        Self {
            owner,
            secret,
            current: None,
            channels: BTreeMap::new(),
            history,
        }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn secret(&self) -> &SecretKey {
        &self.secret
    }

    pub fn current_key(&self) -> Option<&GroupKey> {
        self.current.as_ref().map(|(_, _, k)| k)
    }

    pub fn current_group(&self) -> Option<(GroupId, NodeId)> {
        self.current.as_ref().map(|&(g, m, _)| (g, m))
    }

    /// Remembers a key without installing it.
    pub fn learn(&mut self, key: SymKey) {
        if !self.history.contains(&key) {
            self.history.push(key);
        }
    }

    pub fn add_channel(&mut self, peer: NodeId, key: SymKey) {
        self.learn(key);
        self.channels.insert(peer, key);
    }

    pub fn install(&mut self, group: GroupId, manager: NodeId, key: GroupKey) {
        self.learn(key.bytes);
        self.current = Some((group, manager, key));
    }

    /// Opens a rekey message from `manager` with the key its wrap kind
    /// names, and installs the result.
    pub fn accept(&mut self, group: GroupId, manager: NodeId, msg: &RekeyMessage) -> Result<GroupKey, KeyMgmtError> {
        let wrap = match msg.wrap {
            WrapKind::OldGroupKey => match &self.current {
                Some((g, _, k)) if *g == group => k.bytes,
                _ => return Err(KeyMgmtError::NotInGroup(self.owner)),
            },
            WrapKind::MemberSecretKey => {
                let w = self.secret.bound_to(manager);
                self.learn(w);
                w
            }
            WrapKind::DhChannel => *self.channels.get(&manager).ok_or(KeyMgmtError::Unverified(self.owner))?,
        };
        let key = msg.open(&wrap)?;
        if let Some(cur) = self.current_key().filter(|_| self.current_group().map(|(g, _)| g) == Some(group)) {
            if key.epoch <= cur.epoch {
                return Err(KeyMgmtError::EpochRegression {
                    group,
                    current: cur.epoch,
                    got: key.epoch,
                });
            }
        }
        self.install(group, manager, key.clone());
        Ok(key)
    }

    /// Drops the group key and the channel with its manager.
    pub fn clear_group(&mut self) {
        if let Some((_, m, _)) = self.current.take() {
            self.channels.remove(&m);
        }
    }

    /// Every symmetric key this node ever held, including its own secret.
    pub fn held_keys(&self) -> impl Iterator<Item = &SymKey> {
        self.history.iter()
    }

    /// Key bytes held right now: own secret, group key and open channels.
    pub fn current_bytes(&self) -> u64 {
        let n = 1 + self.current.is_some() as usize + self.channels.len();
        (n * KEY_LEN) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keymgmt::Recipient;

    fn gk(b: u8, epoch: u64) -> GroupKey {
        GroupKey { bytes: [b; 32], epoch }
    }

    #[test]
    fn picks_key_by_wrap_kind() {
        let secret = SecretKey::from_bytes([5; 32]);
        let mut ring = KeyRing::new(NodeId(2), secret.clone());
        let m = NodeId(1);

        let msg = RekeyMessage::seal(
            Recipient::Node(NodeId(2)),
            WrapKind::MemberSecretKey,
            vec![NodeId(2)],
            &secret.bound_to(m),
            &gk(1, 1),
            [0; 16],
        );
        assert_eq!(ring.accept(GroupId(1), m, &msg).unwrap(), gk(1, 1));

        let msg = RekeyMessage::seal(
            Recipient::Broadcast { group: GroupId(1) },
            WrapKind::OldGroupKey,
            vec![],
            &[1; 32],
            &gk(2, 2),
            [1; 16],
        );
        assert_eq!(ring.accept(GroupId(1), m, &msg).unwrap(), gk(2, 2));

        let msg = RekeyMessage::seal(
            Recipient::Node(NodeId(2)),
            WrapKind::DhChannel,
            vec![],
            &[9; 32],
            &gk(3, 3),
            [2; 16],
        );
        assert_eq!(ring.accept(GroupId(1), m, &msg), Err(KeyMgmtError::Unverified(NodeId(2))));
        ring.add_channel(m, [9; 32]);
        assert_eq!(ring.accept(GroupId(1), m, &msg).unwrap(), gk(3, 3));

        // Replayed older epoch.
        let msg = RekeyMessage::seal(
            Recipient::Broadcast { group: GroupId(1) },
            WrapKind::OldGroupKey,
            vec![],
            &[3; 32],
            &gk(4, 2),
            [3; 16],
        );
        assert!(matches!(
            ring.accept(GroupId(1), m, &msg),
            Err(KeyMgmtError::EpochRegression { .. })
        ));
    }

    #[test]
    fn history_survives_clear() {
        let mut ring = KeyRing::new(NodeId(2), SecretKey::from_bytes([5; 32]));
        ring.add_channel(NodeId(1), [7; 32]);
        ring.install(GroupId(1), NodeId(1), gk(8, 1));
        assert_eq!(ring.current_bytes(), 96);
        ring.clear_group();
        assert_eq!(ring.current_key(), None);
        assert_eq!(ring.current_bytes(), 32);
        let held: Vec<_> = ring.held_keys().copied().collect();
        assert_eq!(held, vec![[5; 32], [7; 32], [8; 32]]);
    }
}
