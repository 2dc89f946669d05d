//! Beacon liveness tracking and the blacklist of nodes that went silent or
//! failed key verification.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::model::NodeId;

pub const DEFAULT_BEACON_INTERVAL_MS: u64 = 5_000;
pub const DEFAULT_K_MISSED: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DetectionError {
    #[error("beacon at {now} ms precedes the latest observed time {latest} ms")]
    OutOfOrder { now: u64, latest: u64 },
    #[error("beacon interval and miss threshold must be positive")]
    InvalidParams,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeaconMonitor {
    last_seen: BTreeMap<NodeId, u64>,
    beacon_interval: u64,
    k_missed: u32,
    blacklist: BTreeSet<NodeId>,
    latest: u64,
}

impl Default for BeaconMonitor {
    fn default() -> Self {
        Self::new(DEFAULT_BEACON_INTERVAL_MS, DEFAULT_K_MISSED).unwrap()
    }
}

impl BeaconMonitor {
    pub fn new(beacon_interval: u64, k_missed: u32) -> Result<Self, DetectionError> {
        if beacon_interval == 0 || k_missed == 0 {
            return Err(DetectionError::InvalidParams);
        }
        Ok(Self {
            last_seen: BTreeMap::new(),
            beacon_interval,
            k_missed,
            blacklist: BTreeSet::new(),
            latest: 0,
        })
    }

    /// Silence longer than this gets a node blacklisted.
    pub fn threshold(&self) -> u64 {
        self.k_missed as u64 * self.beacon_interval
    }

    pub fn beacon_interval(&self) -> u64 {
        self.beacon_interval
    }

    pub fn k_missed(&self) -> u32 {
        self.k_missed
    }

    /// Starts tracking `node` as if it had just beaconed.
    pub fn track(&mut self, node: NodeId, now: u64) -> Result<(), DetectionError> {
        self.record_beacon(node, now)
    }

    /// Starts tracking `node` from an earlier observation, e.g. when a node
    /// moves to a new monitor. Does not advance the clock.
    pub fn track_since(&mut self, node: NodeId, last: u64) {
        if !self.blacklist.contains(&node) {
            self.last_seen.insert(node, last);
        }
    }

    pub fn forget(&mut self, node: NodeId) {
        self.last_seen.remove(&node);
    }

    pub fn record_beacon(&mut self, node: NodeId, now: u64) -> Result<(), DetectionError> {
        if now < self.latest {
            return Err(DetectionError::OutOfOrder { now, latest: self.latest });
        }
        self.latest = now;
        if !self.blacklist.contains(&node) {
            self.last_seen.insert(node, now);
        }
        Ok(())
    }

    /// Blacklists every tracked node silent for more than the threshold and
    /// returns those newly added, in id order.
    pub fn sweep(&mut self, now: u64) -> Vec<NodeId> {
        self.latest = self.latest.max(now);
        let threshold = self.threshold();
        let stale: Vec<NodeId> = self
            .last_seen
            .iter()
            .filter(|&(_, &t)| now.saturating_sub(t) > threshold)
            .map(|(&n, _)| n)
            .collect();
        for n in &stale {
            self.last_seen.remove(n);
            self.blacklist.insert(*n);
        }
        stale
    }

    /// Blacklists immediately. Returns false if already listed.
    pub fn report_dangerous(&mut self, node: NodeId) -> bool {
        self.last_seen.remove(&node);
        self.blacklist.insert(node)
    }

    pub fn is_blacklisted(&self, node: NodeId) -> bool {
        self.blacklist.contains(&node)
    }

    pub fn is_tracked(&self, node: NodeId) -> bool {
        self.last_seen.contains_key(&node)
    }

    pub fn last_seen(&self, node: NodeId) -> Option<u64> {
        self.last_seen.get(&node).copied()
    }

    pub fn blacklist(&self) -> &BTreeSet<NodeId> {
        &self.blacklist
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn record_and_ignore() {
        let mut m = BeaconMonitor::new(5, 3).unwrap();
        m.record_beacon(NodeId(1), 5).unwrap();
        assert_eq!(m.last_seen(NodeId(1)), Some(5));
        m.report_dangerous(NodeId(2));
        m.record_beacon(NodeId(2), 6).unwrap();
        assert_eq!(m.last_seen(NodeId(2)), None);
        assert_eq!(m.record_beacon(NodeId(1), 4), Err(DetectionError::OutOfOrder { now: 4, latest: 6 }));
    }

    #[test]
    fn strict_threshold() {
        let mut m = BeaconMonitor::new(5, 3).unwrap();
        m.record_beacon(NodeId(1), 10).unwrap();
        assert!(m.sweep(24).is_empty());
        assert!(m.sweep(25).is_empty());
        assert_eq!(m.sweep(26), vec![NodeId(1)]);
        assert!(m.sweep(30).is_empty());
        assert!(m.is_blacklisted(NodeId(1)));
    }

    #[test]
    fn untracked_nodes_are_never_listed() {
        let mut m = BeaconMonitor::new(5, 3).unwrap();
        assert!(m.sweep(1_000).is_empty());
        assert!(!m.is_blacklisted(NodeId(9)));
    }

    #[test]
    fn reports_are_idempotent() {
        let mut m = BeaconMonitor::default();
        m.track(NodeId(4), 0).unwrap();
        assert!(m.report_dangerous(NodeId(4)));
        assert!(!m.report_dangerous(NodeId(4)));
        assert_eq!(m.blacklist().len(), 1);
        assert!(!m.is_tracked(NodeId(4)));
    }

    #[test]
    fn rejects_zero_params() {
        assert_eq!(BeaconMonitor::new(0, 3), Err(DetectionError::InvalidParams));
        assert_eq!(BeaconMonitor::new(5, 0), Err(DetectionError::InvalidParams));
    }

    proptest! {
        #[test]
        fn punctual_nodes_never_listed(interval in 1u64..10_000, k in 1u32..6, nodes in 1u32..8, steps in 1u64..60) {
            let mut m = BeaconMonitor::new(interval, k).unwrap();
            for s in 0..=steps {
                let now = s * interval;
                for n in 0..nodes {
                    m.record_beacon(NodeId(n), now).unwrap();
                }
                prop_assert!(m.sweep(now).is_empty());
            }
            prop_assert!(m.blacklist().is_empty());
        }

        #[test]
        fn silent_node_listed_by_first_sweep_past_bound(interval in 1u64..1_000, k in 1u32..6, silent_step in 0u64..20) {
            let mut m = BeaconMonitor::new(interval, k).unwrap();
            let t = silent_step * interval;
            let bound = t + m.threshold();
            let mut listed_at = None;
            let mut step = 0;
            while listed_at.is_none() {
                let now = step * interval;
                m.record_beacon(NodeId(0), now).unwrap();
                if now <= t {
                    m.record_beacon(NodeId(1), now).unwrap();
                }
                let out = m.sweep(now);
                prop_assert!(!out.contains(&NodeId(0)));
                if out.contains(&NodeId(1)) {
                    listed_at = Some(now);
                }
                step += 1;
            }
            let at = listed_at.unwrap();
            prop_assert!(at > bound);
            prop_assert!(at <= bound + interval);
        }
    }
}
