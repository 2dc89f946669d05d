use std::collections::{BTreeMap, HashMap};
use std::sync::{Mutex, OnceLock};

use rand::RngCore;

use super::{derive_rekey, KeyMgmtError, MESSAGE_HEADER_LEN};
use crate::crypto::rsa::{open_chunked, seal_chunked};
use crate::crypto::{drsa_keygen, GroupKey, KeyDigest, RsaKeyPair, RsaPrivateKey, SecretKey, SymKey};
use crate::model::{GroupId, NodeId};

/// What a manager needs to rekey one member: the digest that enters key
/// derivation and the wrap key bound to that manager.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemberCredential {
    pub digest: KeyDigest,
    pub wrap_key: SymKey,
}

impl MemberCredential {
    pub const WIRE_LEN: u64 = 64;
}

/// A group key sealed to the manager's device RSA key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupKeyEnvelope {
    pub group: GroupId,
    pub epoch: u64,
    pub manager: NodeId,
    pub key_for_gm: Vec<u8>,
}

impl GroupKeyEnvelope {
    pub fn open(&self, key: &RsaPrivateKey) -> Result<GroupKey, KeyMgmtError> {
        let raw = open_chunked(&self.key_for_gm, key)?;
        let gk = GroupKey::from_wire(&raw)?;
        if gk.epoch != self.epoch {
            return Err(KeyMgmtError::EpochRegression {
                group: self.group,
                current: self.epoch,
                got: gk.epoch,
            });
        }
        Ok(gk)
    }

    pub fn wire_len(&self) -> u64 {
        MESSAGE_HEADER_LEN + self.key_for_gm.len() as u64
    }
}

// Device keys depend only on (id, bits), so scenarios in one process can
// share them.
fn cached_drsa(node: NodeId, bits: u32) -> Result<RsaKeyPair, KeyMgmtError> {
    static CACHE: OnceLock<Mutex<HashMap<(NodeId, u32), RsaKeyPair>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(kp) = cache.lock().expect("drsa cache").get(&(node, bits)) {
        return Ok(kp.clone());
    }
    let kp = drsa_keygen(node, bits)?;
    cache.lock().expect("drsa cache").insert((node, bits), kp.clone());
    Ok(kp)
}

/// The single trusted key authority. Holds every node's long-term secret,
/// lazily generated device RSA keys, and the latest key of every group.
#[derive(Debug, Clone)]
pub struct Kdc {
    rsa_bits: u32,
    registry: BTreeMap<NodeId, SecretKey>,
    rsa: BTreeMap<NodeId, RsaKeyPair>,
    group_keys: BTreeMap<GroupId, GroupKey>,
}

impl Kdc {
    pub fn new(rsa_bits: u32) -> Self {
        Self {
            rsa_bits,
            registry: BTreeMap::new(),
            rsa: BTreeMap::new(),
            group_keys: BTreeMap::new(),
        }
    }

    pub fn register<R: RngCore + ?Sized>(&mut self, node: NodeId, rng: &mut R) -> Result<SecretKey, KeyMgmtError> {
        if self.registry.contains_key(&node) {
            return Err(KeyMgmtError::AlreadyRegistered(node));
        }
        let k = SecretKey::random(rng);
        self.registry.insert(node, k.clone());
        Ok(k)
    }

    pub fn is_registered(&self, node: NodeId) -> bool {
        self.registry.contains_key(&node)
    }

    fn secret(&self, node: NodeId) -> Result<&SecretKey, KeyMgmtError> {
        self.registry.get(&node).ok_or(KeyMgmtError::NotRegistered(node))
    }

    pub fn digest_of(&self, node: NodeId) -> Result<KeyDigest, KeyMgmtError> {
        Ok(self.secret(node)?.digest())
    }

    /// Device RSA key pair, generated on first use.
    pub fn rsa_keypair(&mut self, node: NodeId) -> Result<&RsaKeyPair, KeyMgmtError> {
        self.secret(node)?;
        if !self.rsa.contains_key(&node) {
            let kp = cached_drsa(node, self.rsa_bits)?;
            self.rsa.insert(node, kp);
        }
        Ok(&self.rsa[&node])
    }

    pub fn credential(&self, manager: NodeId, member: NodeId) -> Result<MemberCredential, KeyMgmtError> {
        let k = self.secret(member)?;
        Ok(MemberCredential {
            digest: k.digest(),
            wrap_key: k.bound_to(manager),
        })
    }

    pub fn current_key(&self, group: GroupId) -> Option<&GroupKey> {
        self.group_keys.get(&group)
    }

    fn next_epoch(&self, group: GroupId) -> u64 {
        self.group_keys.get(&group).map_or(1, |k| k.epoch + 1)
    }

    /// Derives a fresh key for `group` over the manager's and members'
    /// secrets. A KDC-managed group passes `NodeId::KDC` as manager.
    fn fresh_key<R: RngCore + ?Sized>(
        &mut self,
        group: GroupId,
        manager: NodeId,
        members: &[NodeId],
        rng: &mut R,
    ) -> Result<GroupKey, KeyMgmtError> {
        let mut participants = Vec::with_capacity(members.len() + 1);
        if !manager.is_kdc() {
            participants.push((manager, self.digest_of(manager)?));
        }
        for &m in members {
            participants.push((m, self.digest_of(m)?));
        }
        let mut nonce = [0u8; 16];
        rng.fill_bytes(&mut nonce);
        let key = derive_rekey(&nonce, self.next_epoch(group), &participants)?;
        self.group_keys.insert(group, key.clone());
        Ok(key)
    }

    /// Issues the next key of `group` and seals it to the manager's device
    /// RSA public key.
    pub fn issue_group_key<R: RngCore + ?Sized>(
        &mut self,
        group: GroupId,
        manager: NodeId,
        members: &[NodeId],
        rng: &mut R,
    ) -> Result<GroupKeyEnvelope, KeyMgmtError> {
        self.secret(manager)?;
        let key = self.fresh_key(group, manager, members, rng)?;
        let public = self.rsa_keypair(manager)?.public();
        Ok(GroupKeyEnvelope {
            group,
            epoch: key.epoch,
            manager,
            key_for_gm: seal_chunked(&key.to_wire(), &public)?,
        })
    }

    /// Issues a key for a group the KDC manages itself.
    pub fn issue_direct<R: RngCore + ?Sized>(&mut self, group: GroupId, members: &[NodeId], rng: &mut R) -> Result<GroupKey, KeyMgmtError> {
        self.fresh_key(group, NodeId::KDC, members, rng)
    }

    /// Records a key a manager derived on its own. Epochs must advance by
    /// exactly one.
    pub fn record_rekey(&mut self, group: GroupId, key: &GroupKey) -> Result<(), KeyMgmtError> {
        let current = self.group_keys.get(&group).map_or(0, |k| k.epoch);
        if key.epoch != current + 1 {
            return Err(KeyMgmtError::EpochRegression {
                group,
                current,
                got: key.epoch,
            });
        }
        self.group_keys.insert(group, key.clone());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn kdc_with(ids: &[u32], bits: u32) -> (Kdc, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut kdc = Kdc::new(bits);
        for &i in ids {
            kdc.register(NodeId(i), &mut rng).unwrap();
        }
        (kdc, rng)
    }

    #[test]
    fn issuance_epochs_and_freshness() {
        let (mut kdc, mut rng) = kdc_with(&[1, 2, 3], 64);
        let e1 = kdc
            .issue_group_key(GroupId(1), NodeId(1), &[NodeId(2), NodeId(3)], &mut rng)
            .unwrap();
        let e2 = kdc
            .issue_group_key(GroupId(1), NodeId(1), &[NodeId(2), NodeId(3)], &mut rng)
            .unwrap();
        assert_eq!(e1.epoch, 1);
        assert_eq!(e2.epoch, 2);
        let private = kdc.rsa_keypair(NodeId(1)).unwrap().private();
        let k1 = e1.open(&private).unwrap();
        let k2 = e2.open(&private).unwrap();
        assert_ne!(k1.bytes, k2.bytes);
        assert_eq!(kdc.current_key(GroupId(1)), Some(&k2));
    }

    #[test]
    fn envelope_roundtrip_at_small_moduli() {
        for bits in [16, 24, 32, 512] {
            let (mut kdc, mut rng) = kdc_with(&[7, 8], bits);
            let env = kdc.issue_group_key(GroupId(3), NodeId(7), &[NodeId(8)], &mut rng).unwrap();
            let private = kdc.rsa_keypair(NodeId(7)).unwrap().private();
            let key = env.open(&private).unwrap();
            assert_eq!(Some(&key), kdc.current_key(GroupId(3)));
            // Another device's key does not recover it.
            let other = kdc.rsa_keypair(NodeId(8)).unwrap().private();
            assert_ne!(env.open(&other).ok(), Some(key));
        }
    }

    #[test]
    fn unregistered_manager_rejected() {
        let (mut kdc, mut rng) = kdc_with(&[1], 32);
        assert_eq!(
            kdc.issue_group_key(GroupId(1), NodeId(5), &[], &mut rng),
            Err(KeyMgmtError::NotRegistered(NodeId(5)))
        );
        assert_eq!(kdc.register(NodeId(1), &mut rng), Err(KeyMgmtError::AlreadyRegistered(NodeId(1))));
        assert!(kdc.credential(NodeId(1), NodeId(9)).is_err());
    }

    #[test]
    fn record_rekey_requires_next_epoch() {
        let (mut kdc, mut rng) = kdc_with(&[1, 2], 32);
        let k = kdc.issue_direct(GroupId(0), &[NodeId(1), NodeId(2)], &mut rng).unwrap();
        assert_eq!(k.epoch, 1);
        let next = GroupKey { bytes: [0; 32], epoch: 2 };
        kdc.record_rekey(GroupId(0), &next).unwrap();
        assert!(kdc.record_rekey(GroupId(0), &next).is_err());
        assert!(kdc.record_rekey(GroupId(0), &GroupKey { bytes: [0; 32], epoch: 4 }).is_err());
    }

    #[test]
    fn credentials_are_manager_bound() {
        let (kdc, _) = kdc_with(&[1, 2, 3], 32);
        let a = kdc.credential(NodeId(1), NodeId(3)).unwrap();
        let b = kdc.credential(NodeId(2), NodeId(3)).unwrap();
        assert_eq!(a.digest, b.digest);
        assert_ne!(a.wrap_key, b.wrap_key);
    }
}
