//! Deterministic discrete-event simulation of a scenario: election, key
//! issuance, churn, beacons and rekeying, with power and time accounting.
//!
//! Messages take no simulated time; link latency only enters the `T_time`
//! metric. Events at one timestamp run leave, join, silence, beacon and
//! sweep, then periodic rekey, ties broken by node id.

mod churn;
mod compare;
mod config;
mod engine;
mod metrics;

use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crypto::CryptoError;
use crate::detection::DetectionError;
use crate::election::ElectionError;
use crate::keymgmt::{Group, GroupKeyEnvelope, KeyMgmtError, KeyRing, RekeyTranscript};
use crate::model::{ModelError, NodeId, NodeRecord, TraceEvent};

pub use churn::{random_churn, ChurnSpec};
pub use compare::{compare, reference_fixtures, Comparison, FixtureRow, MetricRow, REFERENCE_LABEL};
pub use config::{
    BeaconConfig, ChurnAction, ChurnEvent, ConfigError, CryptoConfig, Dishonest, ElectionConfig, LinkConfig, PowerConfig, ScenarioConfig,
};
pub use engine::{ANNOUNCE_BYTES, JOIN_REQUEST_BYTES, KEY_REQUEST_BYTES};
pub use metrics::{total_power, total_time, total_time_us, MetricsReport, Scheme, Tally};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("reports come from different scenarios")]
    ConfigMismatch,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Election(#[from] ElectionError),
    #[error(transparent)]
    KeyMgmt(#[from] KeyMgmtError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
}

/// A rekey transcript with its position in the run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordedTranscript {
    pub seq: u64,
    pub time: u64,
    pub transcript: RekeyTranscript,
}

impl RecordedTranscript {
    pub fn to_json(&self, full: bool) -> serde_json::Value {
        let mut v = self.transcript.to_json(full);
        v["seq"] = self.seq.into();
        v["time"] = self.time.into();
        v
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub scheme: Scheme,
    pub trace: Vec<TraceEvent>,
    pub report: MetricsReport,
    /// Live totals; the report is built from these.
    pub tally: Tally,
    pub transcripts: Vec<RecordedTranscript>,
    pub envelopes: Vec<GroupKeyEnvelope>,
    /// Final key store of every node, including all keys it ever held.
    pub keyrings: BTreeMap<NodeId, KeyRing>,
    pub groups: Vec<Group>,
    pub blacklist: BTreeSet<NodeId>,
    pub nodes: BTreeMap<NodeId, NodeRecord>,
}

impl ScenarioOutcome {
    /// The trace as JSON lines, newline terminated.
    pub fn trace_jsonl(&self) -> String {
        let mut s = String::new();
        for ev in &self.trace {
            s.push_str(&ev.to_json_line());
            s.push('\n');
        }
        s
    }

    pub fn trace_hash(&self) -> String {
        hex::encode(Sha256::digest(self.trace_jsonl().as_bytes()))
    }

    pub fn transcripts_jsonl(&self, full: bool) -> String {
        let mut s = String::new();
        for t in &self.transcripts {
            s.push_str(&t.to_json(full).to_string());
            s.push('\n');
        }
        s
    }
}

/// Runs the scheme the config selects (`baseline` flag).
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutcome, SimError> {
    let scheme = if cfg.baseline { Scheme::Baseline } else { Scheme::HtRcf };
    run_scheme(cfg, scheme)
}

/// The same scenario without clustering: one group managed by the KDC,
/// which rekeys every member individually on each membership change.
pub fn run_baseline(cfg: &ScenarioConfig) -> Result<ScenarioOutcome, SimError> {
    run_scheme(cfg, Scheme::Baseline)
}

pub fn run_scheme(cfg: &ScenarioConfig, scheme: Scheme) -> Result<ScenarioOutcome, SimError> {
    engine::simulate(cfg, scheme)
}
