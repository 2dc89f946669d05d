//! Shared domain vocabulary: node and group identities, power accounting,
//! node status, and the trace events every other module emits.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("maximum power must be positive, got {0} J")]
    NonPositiveCapacity(f64),
    #[error("group probability must lie in (0, 1], got {0}")]
    ProbabilityOutOfRange(f64),
    #[error("residual power {residual} exceeds capacity {capacity}")]
    ResidualAboveCapacity { residual: Energy, capacity: Energy },
    #[error("node {node}: illegal status transition {from:?} -> {to:?}")]
    IllegalTransition { node: NodeId, from: NodeStatus, to: NodeStatus },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    /// Pseudo-identity of the key distribution center in traces.
    pub const KDC: NodeId = NodeId(u32::MAX);

    pub fn is_kdc(self) -> bool {
        self == Self::KDC
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_kdc() {
            f.write_str("kdc")
        } else {
            write!(f, "n{}", self.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupId(pub u32);

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}", self.0)
    }
}

/// Energy in integer microjoules.
///
/// Integer units make the accounting exact: the energies of a node's trace
/// events always sum to `p_ext - p_res` with no rounding drift. Serialized
/// as joules.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Energy(u64);

impl Energy {
    pub const ZERO: Energy = Energy(0);
    const PER_JOULE: f64 = 1_000_000.0;

    pub const fn from_micro(uj: u64) -> Self {
        Energy(uj)
    }

    /// Rounds to the nearest microjoule; negative and NaN inputs map to zero.
    pub fn from_joules(j: f64) -> Self {
        if j.is_nan() || j <= 0.0 {
            Energy(0)
        } else {
            Energy((j * Self::PER_JOULE).round() as u64)
        }
    }

    pub const fn micro(self) -> u64 {
        self.0
    }

    pub fn joules(self) -> f64 {
        self.0 as f64 / Self::PER_JOULE
    }

    pub fn saturating_sub(self, other: Energy) -> Energy {
        Energy(self.0.saturating_sub(other.0))
    }

    pub fn checked_add(self, other: Energy) -> Option<Energy> {
        self.0.checked_add(other.0).map(Energy)
    }

    pub fn scale(self, n: u64) -> Energy {
        Energy(self.0 * n)
    }
}

impl std::ops::Add for Energy {
    type Output = Energy;
    fn add(self, rhs: Energy) -> Energy {
        Energy(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for Energy {
    fn add_assign(&mut self, rhs: Energy) {
        self.0 += rhs.0;
    }
}

impl std::iter::Sum for Energy {
    fn sum<I: Iterator<Item = Energy>>(iter: I) -> Energy {
        iter.fold(Energy::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for Energy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6} J", self.joules())
    }
}

impl Serialize for Energy {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.joules())
    }
}

impl<'de> Deserialize<'de> for Energy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let j = f64::deserialize(d)?;
        if j < 0.0 {
            return Err(serde::de::Error::custom("energy must be non-negative"));
        }
        Ok(Energy::from_joules(j))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PowerState {
    p_res: Energy,
    p_ext: Energy,
}

impl PowerState {
    pub fn full(p_ext: Energy) -> Result<Self, ModelError> {
        Self::new(p_ext, p_ext)
    }

    pub fn new(p_res: Energy, p_ext: Energy) -> Result<Self, ModelError> {
        if p_ext == Energy::ZERO {
            return Err(ModelError::NonPositiveCapacity(p_ext.joules()));
        }
        if p_res > p_ext {
            return Err(ModelError::ResidualAboveCapacity {
                residual: p_res,
                capacity: p_ext,
            });
        }
        Ok(Self { p_res, p_ext })
    }

    pub fn residual(&self) -> Energy {
        self.p_res
    }

    pub fn capacity(&self) -> Energy {
        self.p_ext
    }

    /// Residual over capacity, in [0, 1].
    pub fn fraction(&self) -> f64 {
        self.p_res.micro() as f64 / self.p_ext.micro() as f64
    }

    pub fn is_depleted(&self) -> bool {
        self.p_res == Energy::ZERO
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeStatus {
    Unclustered,
    Tentative,
    Final,
    GroupManager,
    Blacklisted,
}

impl NodeStatus {
    /// Transition table of one clustering episode:
    /// `Unclustered Tentative* (Final | GroupManager) Blacklisted?`.
    ///
    /// Blacklisting is also reachable before a node settles, since a joiner
    /// can fail key verification while still unclustered.
    pub fn can_become(self, next: NodeStatus) -> bool {
        use NodeStatus::*;
        match (self, next) {
            (Blacklisted, _) => false,
            (_, Blacklisted) => true,
            (Unclustered | Tentative, Tentative | Final | GroupManager) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub id: NodeId,
    pub power: PowerState,
    pub group_prob: f64,
    status: NodeStatus,
}

/// Creates a fully charged, unclustered node.
pub fn create_node(id: NodeId, p_ext_joules: f64, initial_prob: f64) -> Result<NodeRecord, ModelError> {
    if p_ext_joules.is_nan() || p_ext_joules <= 0.0 {
        return Err(ModelError::NonPositiveCapacity(p_ext_joules));
    }
    if !(initial_prob > 0.0 && initial_prob <= 1.0) {
        return Err(ModelError::ProbabilityOutOfRange(initial_prob));
    }
    let cap = Energy::from_joules(p_ext_joules);
    Ok(NodeRecord {
        id,
        power: PowerState::full(cap)?,
        group_prob: initial_prob,
        status: NodeStatus::Unclustered,
    })
}

impl NodeRecord {
    pub fn status(&self) -> NodeStatus {
        self.status
    }

    pub fn is_alive(&self) -> bool {
        !self.power.is_depleted()
    }

    pub fn is_blacklisted(&self) -> bool {
        self.status == NodeStatus::Blacklisted
    }

    pub fn transition(&mut self, next: NodeStatus) -> Result<(), ModelError> {
        if !self.status.can_become(next) {
            return Err(ModelError::IllegalTransition {
                node: self.id,
                from: self.status,
                to: next,
            });
        }
        self.status = next;
        Ok(())
    }

    /// Starts a new clustering episode (after leaving a group or before a
    /// re-election). Blacklisted nodes stay blacklisted.
    pub fn reset_episode(&mut self) -> Result<(), ModelError> {
        if self.status == NodeStatus::Blacklisted {
            return Err(ModelError::IllegalTransition {
                node: self.id,
                from: self.status,
                to: NodeStatus::Unclustered,
            });
        }
        self.status = NodeStatus::Unclustered;
        Ok(())
    }

    /// Draws `amount` from the node's battery, saturating at zero. The
    /// returned event carries the energy actually drawn, so per-node event
    /// energies always sum to `p_ext - p_res`.
    pub fn consume_power(&mut self, amount: Energy, kind: TraceKind, time: u64, bytes: u64) -> TraceEvent {
        let drawn = amount.min(self.power.p_res);
        self.power.p_res = self.power.p_res.saturating_sub(drawn);
        TraceEvent {
            time,
            kind,
            node: self.id,
            bytes,
            energy: drawn,
        }
    }
}

/// Per-byte radio cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    /// Joules per transmitted byte.
    pub send_per_byte: f64,
    /// Joules per received byte.
    pub recv_per_byte: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self {
            send_per_byte: 0.002,
            recv_per_byte: 0.001,
        }
    }
}

impl PowerModel {
    pub fn send_cost(&self, bytes: u64) -> Energy {
        Energy::from_joules(self.send_per_byte).scale(bytes)
    }

    pub fn recv_cost(&self, bytes: u64) -> Energy {
        Energy::from_joules(self.recv_per_byte).scale(bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TraceKind {
    Send,
    Receive,
    Beacon,
    Rekey,
    Join,
    Leave,
    Blacklist,
    Elect,
}

impl TraceKind {
    pub fn parse(s: &str) -> Option<TraceKind> {
        use TraceKind::*;
        Some(match s.to_ascii_lowercase().as_str() {
            "send" => Send,
            "receive" => Receive,
            "beacon" => Beacon,
            "rekey" => Rekey,
            "join" => Join,
            "leave" => Leave,
            "blacklist" => Blacklist,
            "elect" => Elect,
            _ => return None,
        })
    }

    /// Radio traffic; the only kinds that carry energy or latency.
    pub fn is_traffic(self) -> bool {
        matches!(self, TraceKind::Send | TraceKind::Receive | TraceKind::Beacon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Milliseconds since scenario start.
    pub time: u64,
    pub kind: TraceKind,
    pub node: NodeId,
    pub bytes: u64,
    pub energy: Energy,
}

impl TraceEvent {
    pub fn marker(time: u64, kind: TraceKind, node: NodeId, bytes: u64) -> Self {
        Self {
            time,
            kind,
            node,
            bytes,
            energy: Energy::ZERO,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace event serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn create_node_contract() {
        let n = create_node(NodeId(1), 100.0, 0.05).unwrap();
        assert_eq!(n.power.residual(), Energy::from_joules(100.0));
        assert_eq!(n.status(), NodeStatus::Unclustered);

        assert!(create_node(NodeId(2), 0.0, 0.05).is_err());
        assert!(create_node(NodeId(2), -1.0, 0.05).is_err());
        assert!(create_node(NodeId(2), 10.0, 0.0).is_err());
        assert!(create_node(NodeId(2), 10.0, 1.5).is_err());
        assert!(create_node(NodeId(3), 50.0, 1.0).is_ok());
    }

    #[test]
    fn consume_power_examples() {
        let mut n = create_node(NodeId(1), 10.0, 0.5).unwrap();
        let ev = n.consume_power(Energy::from_joules(3.0), TraceKind::Send, 0, 10);
        assert_eq!(n.power.residual(), Energy::from_joules(7.0));
        assert_eq!(ev.energy, Energy::from_joules(3.0));

        let mut n = create_node(NodeId(1), 10.0, 0.5).unwrap();
        n.power = PowerState::new(Energy::from_joules(2.0), Energy::from_joules(10.0)).unwrap();
        let ev = n.consume_power(Energy::from_joules(5.0), TraceKind::Receive, 0, 10);
        assert_eq!(n.power.residual(), Energy::ZERO);
        assert!(!n.is_alive());
        assert_eq!(ev.energy, Energy::from_joules(2.0));

        let mut n = create_node(NodeId(1), 10.0, 0.5).unwrap();
        let ev = n.consume_power(Energy::ZERO, TraceKind::Send, 0, 0);
        assert_eq!(n.power.residual(), Energy::from_joules(10.0));
        assert_eq!(ev.energy, Energy::ZERO);
    }

    #[test]
    fn status_machine() {
        use NodeStatus::*;
        let mut n = create_node(NodeId(4), 1.0, 0.1).unwrap();
        n.transition(Tentative).unwrap();
        n.transition(Tentative).unwrap();
        n.transition(GroupManager).unwrap();
        assert!(n.transition(Final).is_err());
        n.transition(Blacklisted).unwrap();
        assert!(n.transition(Tentative).is_err());
        assert!(n.reset_episode().is_err());
    }

    #[test]
    fn trace_json_keys() {
        let ev = TraceEvent {
            time: 5,
            kind: TraceKind::Beacon,
            node: NodeId(9),
            bytes: 16,
            energy: Energy::from_micro(32_000),
        };
        let v: serde_json::Value = serde_json::from_str(&ev.to_json_line()).unwrap();
        assert_eq!(v["time"], 5);
        assert_eq!(v["kind"], "Beacon");
        assert_eq!(v["node"], 9);
        assert_eq!(v["bytes"], 16);
        assert_eq!(v["energy"], 0.032);
        let back: TraceEvent = serde_json::from_value(v).unwrap();
        assert_eq!(back, ev);
    }

    fn status_strategy() -> impl Strategy<Value = NodeStatus> {
        prop_oneof![
            Just(NodeStatus::Unclustered),
            Just(NodeStatus::Tentative),
            Just(NodeStatus::Final),
            Just(NodeStatus::GroupManager),
            Just(NodeStatus::Blacklisted),
        ]
    }

    // Accepted status histories of one episode match
    // Unclustered Tentative* (Final|GroupManager)? Blacklisted?
    fn matches_episode(seq: &[NodeStatus]) -> bool {
        use NodeStatus::*;
        let mut i = 0;
        if seq.get(i) != Some(&Unclustered) {
            return false;
        }
        i += 1;
        while seq.get(i) == Some(&Tentative) {
            i += 1;
        }
        if matches!(seq.get(i), Some(Final) | Some(GroupManager)) {
            i += 1;
        }
        if seq.get(i) == Some(&Blacklisted) {
            i += 1;
        }
        i == seq.len()
    }

    proptest! {
        #[test]
        fn accepted_histories_are_regular(attempts in proptest::collection::vec(status_strategy(), 0..20)) {
            let mut n = create_node(NodeId(1), 1.0, 0.5).unwrap();
            let mut history = vec![n.status()];
            for s in attempts {
                if n.transition(s).is_ok() {
                    history.push(s);
                }
            }
            prop_assert!(matches_episode(&history), "{:?}", history);
        }

        #[test]
        fn energy_conservation(cap in 1u64..10_000_000, draws in proptest::collection::vec(0u64..3_000_000, 0..40)) {
            let mut n = create_node(NodeId(1), 1.0, 0.5).unwrap();
            n.power = PowerState::full(Energy::from_micro(cap)).unwrap();
            let mut total = Energy::ZERO;
            for (i, d) in draws.into_iter().enumerate() {
                let kind = if i % 2 == 0 { TraceKind::Send } else { TraceKind::Receive };
                let ev = n.consume_power(Energy::from_micro(d), kind, i as u64, 1);
                total += ev.energy;
                prop_assert!(n.power.residual() <= n.power.capacity());
            }
            prop_assert_eq!(total, n.power.capacity().saturating_sub(n.power.residual()));
        }
    }
}
