use std::collections::BTreeSet;

use rand::seq::IteratorRandom;
use rand::Rng;

use super::config::{ChurnAction, ChurnEvent};

/// Shape of a random churn script.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChurnSpec {
    pub leaves: u32,
    pub joins: u32,
    pub silences: u32,
    pub start_ms: u64,
    pub end_ms: u64,
    /// Lets nodes that left join again.
    pub allow_rejoin: bool,
    /// Never shrink the network below this many nodes.
    pub min_present: u32,
}

/// Draws a valid churn script. Events get strictly increasing times spread
/// over `[start_ms, end_ms]`. Actions that cannot be satisfied (nobody left
/// to join, network at its minimum) are dropped.
pub fn random_churn<R: Rng + ?Sized>(node_count: u32, standby_count: u32, spec: &ChurnSpec, rng: &mut R) -> Vec<ChurnEvent> {
    let mut present: BTreeSet<u32> = (0..node_count).collect();
    let mut joinable: BTreeSet<u32> = (node_count..node_count + standby_count).collect();
    let mut actions: Vec<ChurnAction> = std::iter::repeat_n(ChurnAction::Leave, spec.leaves as usize)
        .chain(std::iter::repeat_n(ChurnAction::Join, spec.joins as usize))
        .chain(std::iter::repeat_n(ChurnAction::Silence, spec.silences as usize))
        .collect();
    // Fisher-Yates through the rng so the order is seed-determined.
    for i in (1..actions.len()).rev() {
        let j = rng.random_range(0..=i);
        actions.swap(i, j);
    }

    let n = actions.len() as u64;
    let span = spec.end_ms.saturating_sub(spec.start_ms);
    let step = (span / (n + 1)).max(1);
    let mut out = Vec::with_capacity(actions.len());
    for (i, action) in actions.into_iter().enumerate() {
        let time_ms = spec.start_ms + step * (i as u64 + 1);
        let pick = match action {
            ChurnAction::Join => joinable.iter().copied().choose(rng),
            _ if present.len() as u32 <= spec.min_present => None,
            _ => present.iter().copied().choose(rng),
        };
        let Some(node) = pick else { continue };
        match action {
            ChurnAction::Join => {
                joinable.remove(&node);
                present.insert(node);
            }
            ChurnAction::Leave => {
                present.remove(&node);
                if spec.allow_rejoin {
                    joinable.insert(node);
                }
            }
            ChurnAction::Silence => {
                present.remove(&node);
            }
        }
        out.push(ChurnEvent { time_ms, action, node });
    }
    out
}
