use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::LinkConfig;
use crate::model::{Energy, GroupId, TraceEvent, TraceKind};

/// `T_pow`: energy summed over every radio event (sends, receives and
/// beacons). Other kinds carry no energy.
pub fn total_power(trace: &[TraceEvent]) -> Energy {
    trace.iter().filter(|e| e.kind.is_traffic()).map(|e| e.energy).sum()
}

/// `T_time` in microseconds: per radio event, `bytes / rate + hop`.
pub fn total_time_us(trace: &[TraceEvent], link: &LinkConfig) -> u64 {
    trace.iter().filter(|e| e.kind.is_traffic()).map(|e| link.latency_us(e.bytes)).sum()
}

pub fn total_time(trace: &[TraceEvent], link: &LinkConfig) -> f64 {
    total_time_us(trace, link) as f64 / 1000.0
}

/// Totals kept while the simulation runs. Recomputable from the trace with
/// [`Tally::from_trace`], except for the per-group split.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Tally {
    pub t_pow: Energy,
    pub t_time_us: u64,
    pub messages_sent: u64,
    pub bytes_sent: u64,
    pub beacons_sent: u64,
    pub rekey_count: u64,
    pub rekey_bytes: u64,
    pub blacklist_count: u64,
    pub per_group: BTreeMap<GroupId, Energy>,
}

impl Tally {
    pub fn record(&mut self, ev: &TraceEvent, link: &LinkConfig, group: Option<GroupId>) {
        if ev.kind.is_traffic() {
            self.t_pow += ev.energy;
            self.t_time_us += link.latency_us(ev.bytes);
            if let Some(g) = group {
                *self.per_group.entry(g).or_default() += ev.energy;
            }
        }
        match ev.kind {
            TraceKind::Send => {
                self.messages_sent += 1;
                self.bytes_sent += ev.bytes;
            }
            TraceKind::Beacon => {
                self.messages_sent += 1;
                self.bytes_sent += ev.bytes;
                self.beacons_sent += 1;
            }
            TraceKind::Rekey => {
                self.rekey_count += 1;
                self.rekey_bytes += ev.bytes;
            }
            TraceKind::Blacklist => self.blacklist_count += 1,
            _ => {}
        }
    }

    pub fn from_trace(trace: &[TraceEvent], link: &LinkConfig) -> Self {
        let mut t = Self::default();
        for ev in trace {
            t.record(ev, link, None);
        }
        t
    }

    /// Equality on everything the trace determines.
    pub fn same_totals(&self, other: &Tally) -> bool {
        let strip = |t: &Tally| Tally {
            per_group: BTreeMap::new(),
            ..t.clone()
        };
        strip(self) == strip(other)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    HtRcf,
    Baseline,
}

impl Scheme {
    pub fn label(self) -> &'static str {
        match self {
            Scheme::HtRcf => "ht-rcf",
            Scheme::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scheme: Scheme,
    pub config_digest: String,
    pub seed: u64,
    /// Joules.
    pub t_pow: f64,
    pub t_pow_uj: u64,
    /// Joules per group id, `"g3"` style keys.
    pub t_pow_per_group: BTreeMap<String, f64>,
    /// Milliseconds.
    pub t_time: f64,
    pub t_time_us: u64,
    pub rekey_count: u64,
    pub rekey_bytes: u64,
    pub messages_sent: u64,
    pub bytes_sent: u64,
    pub beacons_sent: u64,
    pub blacklist_count: u64,
    pub groups_formed: u64,
    pub final_groups: u64,
    /// Largest number of key bytes any node held at once.
    pub peak_key_bytes: u64,
}

/// Flat CSV form of a report, without the per-group split.
#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    scheme: &'a str,
    config_digest: &'a str,
    seed: u64,
    t_pow: f64,
    t_pow_uj: u64,
    t_time: f64,
    t_time_us: u64,
    rekey_count: u64,
    rekey_bytes: u64,
    messages_sent: u64,
    bytes_sent: u64,
    beacons_sent: u64,
    blacklist_count: u64,
    groups_formed: u64,
    final_groups: u64,
    peak_key_bytes: u64,
}

impl MetricsReport {
    pub fn from_tally(
        scheme: Scheme,
        config_digest: String,
        seed: u64,
        tally: &Tally,
        groups_formed: u64,
        final_groups: u64,
        peak_key_bytes: u64,
    ) -> Self {
        Self {
            scheme,
            config_digest,
            seed,
            t_pow: tally.t_pow.joules(),
            t_pow_uj: tally.t_pow.micro(),
            t_pow_per_group: tally.per_group.iter().map(|(g, e)| (g.to_string(), e.joules())).collect(),
            t_time: tally.t_time_us as f64 / 1000.0,
            t_time_us: tally.t_time_us,
            rekey_count: tally.rekey_count,
            rekey_bytes: tally.rekey_bytes,
            messages_sent: tally.messages_sent,
            bytes_sent: tally.bytes_sent,
            beacons_sent: tally.beacons_sent,
            blacklist_count: tally.blacklist_count,
            groups_formed,
            final_groups,
            peak_key_bytes,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Header line plus one row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(CsvRow {
            scheme: self.scheme.label(),
            config_digest: &self.config_digest,
            seed: self.seed,
            t_pow: self.t_pow,
            t_pow_uj: self.t_pow_uj,
            t_time: self.t_time,
            t_time_us: self.t_time_us,
            rekey_count: self.rekey_count,
            rekey_bytes: self.rekey_bytes,
            messages_sent: self.messages_sent,
            bytes_sent: self.bytes_sent,
            beacons_sent: self.beacons_sent,
            blacklist_count: self.blacklist_count,
            groups_formed: self.groups_formed,
            final_groups: self.final_groups,
            peak_key_bytes: self.peak_key_bytes,
        })
        .expect("csv row serializes");
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
    }
}
