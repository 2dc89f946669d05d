use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crypto::rsa::MIN_BITS;
use crate::crypto::{DhParamsId, PeerBehavior};
use crate::election::round_bound;
use crate::model::{NodeId, PowerModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("churn[{index}]: {message}")]
    Churn { index: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChurnAction {
    Leave,
    Join,
    Silence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChurnEvent {
    pub time_ms: u64,
    pub action: ChurnAction,
    pub node: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dishonest {
    pub node: u32,
    #[serde(default = "default_behavior")]
    pub behavior: PeerBehavior,
}

fn default_behavior() -> PeerBehavior {
    PeerBehavior::SubstituteKey
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerConfig {
    /// Battery capacity range in joules, drawn uniformly per node.
    pub p_ext_min: f64,
    pub p_ext_max: f64,
    /// Initial residual as a fraction of capacity, drawn uniformly.
    pub residual_min: f64,
    pub residual_max: f64,
    pub send_per_byte: f64,
    pub recv_per_byte: f64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        let pm = PowerModel::default();
        Self {
            p_ext_min: 50.0,
            p_ext_max: 100.0,
            residual_min: 0.5,
            residual_max: 1.0,
            send_per_byte: pm.send_per_byte,
            recv_per_byte: pm.recv_per_byte,
        }
    }
}

impl PowerConfig {
    pub fn model(&self) -> PowerModel {
        PowerModel {
            send_per_byte: self.send_per_byte,
            recv_per_byte: self.recv_per_byte,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElectionConfig {
    pub initial_prob: f64,
    pub p_min: f64,
    pub max_rounds: Option<u32>,
    /// When set, the initial election is repeated with fresh draws until it
    /// yields this many groups (closest result after a bounded number of
    /// attempts).
    pub target_groups: Option<u32>,
}

impl Default for ElectionConfig {
    fn default() -> Self {
        Self {
            initial_prob: 0.05,
            p_min: 0.01,
            max_rounds: None,
            target_groups: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CryptoConfig {
    pub rsa_bits: u32,
    pub dh: DhParamsId,
}

impl Default for CryptoConfig {
    fn default() -> Self {
        Self {
            rsa_bits: 512,
            dh: DhParamsId::Default256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeaconConfig {
    pub interval_ms: u64,
    pub k_missed: u32,
    pub bytes: u64,
}

impl Default for BeaconConfig {
    fn default() -> Self {
        Self {
            interval_ms: crate::detection::DEFAULT_BEACON_INTERVAL_MS,
            k_missed: crate::detection::DEFAULT_K_MISSED,
            bytes: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub rate_bytes_per_ms: u64,
    pub hop_latency_ms: u64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            rate_bytes_per_ms: 250,
            hop_latency_ms: 1,
        }
    }
}

impl LinkConfig {
    /// Latency of one send or receive of `bytes`, in microseconds.
    pub fn latency_us(&self, bytes: u64) -> u64 {
        (bytes * 1000).div_ceil(self.rate_bytes_per_ms) + self.hop_latency_ms * 1000
    }
}

/// A scenario. Nodes `0..node_count` start in the network; the next
/// `standby_count` ids may join later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub node_count: u32,
    pub standby_count: u32,
    /// Side of the square region node positions are drawn from, in metres.
    pub region: f64,
    /// Nodes farther apart cannot hear each other. `None`: everyone can.
    pub radio_range: Option<f64>,
    pub duration_ms: u64,
    pub baseline: bool,
    /// 0 disables periodic rekeying.
    pub periodic_rekey_ms: u64,
    pub dishonest_nodes: Vec<Dishonest>,
    pub power: PowerConfig,
    pub election: ElectionConfig,
    pub crypto: CryptoConfig,
    pub beacon: BeaconConfig,
    pub link: LinkConfig,
    pub churn: Vec<ChurnEvent>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            node_count: 100,
            standby_count: 0,
            region: 100.0,
            radio_range: None,
            duration_ms: 100_000,
            baseline: false,
            periodic_rekey_ms: 0,
            dishonest_nodes: Vec::new(),
            power: PowerConfig::default(),
            election: ElectionConfig::default(),
            crypto: CryptoConfig::default(),
            beacon: BeaconConfig::default(),
            link: LinkConfig::default(),
            churn: Vec::new(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn total_nodes(&self) -> u32 {
        self.node_count + self.standby_count
    }

    pub fn behavior_of(&self, node: NodeId) -> PeerBehavior {
        self.dishonest_nodes
            .iter()
            .find(|d| d.node == node.0)
            .map_or(PeerBehavior::Honest, |d| d.behavior)
    }

    /// Hash of the scenario with the scheme flag cleared, so a run and its
    /// baseline share a digest.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.baseline = false;
        let text = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Churn in execution order: time, then leave before join before
    /// silence, then node id. Carries the original index.
    pub fn ordered_churn(&self) -> Vec<(usize, ChurnEvent)> {
        let mut v: Vec<_> = self.churn.iter().copied().enumerate().collect();
        v.sort_by_key(|(i, e)| (e.time_ms, e.action, e.node, *i));
        v
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.node_count == 0 {
            return Err(invalid("node_count must be at least 1"));
        }
        if self.total_nodes() == u32::MAX {
            return Err(invalid("too many nodes"));
        }
        if !(self.region.is_finite() && self.region > 0.0) {
            return Err(invalid("region must be positive"));
        }
        if let Some(r) = self.radio_range {
            if !(r.is_finite() && r > 0.0) {
                return Err(invalid("radio_range must be positive"));
            }
        }
        let p = &self.power;
        if !(p.p_ext_min > 0.0 && p.p_ext_min <= p.p_ext_max && p.p_ext_max.is_finite()) {
            return Err(invalid("power: need 0 < p_ext_min <= p_ext_max"));
        }
        if !(p.residual_min > 0.0 && p.residual_min <= p.residual_max && p.residual_max <= 1.0) {
            return Err(invalid("power: need 0 < residual_min <= residual_max <= 1"));
        }
        if !(p.send_per_byte >= 0.0 && p.recv_per_byte >= 0.0 && p.send_per_byte.is_finite() && p.recv_per_byte.is_finite()) {
            return Err(invalid("power: per-byte costs must be non-negative"));
        }
        let e = &self.election;
        if !(e.initial_prob > 0.0 && e.initial_prob <= 1.0) {
            return Err(invalid("election.initial_prob must lie in (0, 1]"));
        }
        round_bound(e.p_min).map_err(|err| invalid(format!("election: {err}")))?;
        if e.max_rounds == Some(0) {
            return Err(invalid("election.max_rounds must be at least 1"));
        }
        if e.target_groups == Some(0) {
            return Err(invalid("election.target_groups must be at least 1"));
        }
        if self.crypto.rsa_bits < MIN_BITS {
            return Err(invalid(format!("crypto.rsa_bits must be at least {MIN_BITS}")));
        }
        if self.beacon.interval_ms == 0 || self.beacon.k_missed == 0 {
            return Err(invalid("beacon interval and k_missed must be positive"));
        }
        if self.link.rate_bytes_per_ms == 0 {
            return Err(invalid("link.rate_bytes_per_ms must be positive"));
        }

        let mut seen = BTreeSet::new();
        for d in &self.dishonest_nodes {
            if d.node < self.node_count || d.node >= self.total_nodes() {
                return Err(invalid(format!("dishonest node {} must be a standby node", d.node)));
            }
            if !seen.insert(d.node) {
                return Err(invalid(format!("dishonest node {} listed twice", d.node)));
            }
        }
        self.validate_churn()
    }

    fn validate_churn(&self) -> Result<(), ConfigError> {
        #[derive(PartialEq)]
        enum Presence {
            In,
            Out,
            Gone,
        }
        let mut presence: BTreeMap<u32, Presence> = (0..self.total_nodes())
            .map(|i| (i, if i < self.node_count { Presence::In } else { Presence::Out }))
            .collect();
        let dishonest: BTreeSet<u32> = self.dishonest_nodes.iter().map(|d| d.node).collect();
        for (index, ev) in self.ordered_churn() {
            let fail = |message: String| ConfigError::Churn { index, message };
            if ev.time_ms > self.duration_ms {
                return Err(fail(format!("time {} ms is past duration {} ms", ev.time_ms, self.duration_ms)));
            }
            let Some(state) = presence.get_mut(&ev.node) else {
                return Err(fail(format!("unknown node {}", ev.node)));
            };
            match (ev.action, &*state) {
                (_, Presence::Gone) => {
                    return Err(fail(format!("node {} was silenced or rejected earlier", ev.node)));
                }
                (ChurnAction::Join, Presence::Out) => {
                    *state = if dishonest.contains(&ev.node) {
                        Presence::Gone
                    } else {
                        Presence::In
                    };
                }
                (ChurnAction::Join, Presence::In) => {
                    return Err(fail(format!("node {} is already in the network", ev.node)));
                }
                (ChurnAction::Leave, Presence::In) => *state = Presence::Out,
                (ChurnAction::Silence, Presence::In) => *state = Presence::Gone,
                (_, Presence::Out) => {
                    return Err(fail(format!("node {} is not in the network", ev.node)));
                }
            }
        }
        Ok(())
    }
}
