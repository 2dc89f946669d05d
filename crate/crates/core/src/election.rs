//! Power-aware iterative group-manager election.
//!
//! Every undecided node starts from `GM_p = clamp(G_p * P_res / P_ext,
//! p_min, 1)` and doubles it each round, so the loop ends within
//! `ceil(log2(1 / p_min)) + 1` rounds. One round, with nodes in `NodeId`
//! order and announcements from earlier rounds visible:
//!
//! * a tentative manager whose probability reached 1 turns final;
//! * a node that hears a final manager joins the cheapest one;
//! * a node that hears only tentative managers joins the cheapest
//!   provisionally and waits;
//! * a node that hears nothing draws one uniform number and becomes a
//!   candidate if it falls below its probability, announcing Tentative or
//!   Final status by [`node_status`].
//!
//! Undecided nodes then double their probability. After the last round
//! tentative managers finalize, waiting nodes join the cheapest final
//! manager they hear, and anyone still uncovered elects itself.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GroupId, NodeId, NodeRecord, NodeStatus, PowerState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ElectionError {
    #[error("no alive node to elect from")]
    NoAliveNodes,
    #[error("minimum probability must lie in (0, 1], got {0}")]
    InvalidFloor(f64),
    #[error("max_rounds must be at least 1")]
    ZeroRounds,
    #[error("link cost must be finite and non-negative, got {0}")]
    InvalidCost(f64),
    #[error("unknown node {0} in link cost table")]
    UnknownNode(NodeId),
    #[error("no link between {0} and {1}")]
    NoLink(NodeId, NodeId),
}

/// Symmetric pairwise intra-group transmission cost. A missing pair means
/// the two nodes cannot hear each other.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkCosts {
    nodes: BTreeSet<NodeId>,
    costs: BTreeMap<(NodeId, NodeId), f64>,
}

fn ordered(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl LinkCosts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: NodeId) {
        self.nodes.insert(id);
    }

    pub fn insert(&mut self, a: NodeId, b: NodeId, cost: f64) -> Result<(), ElectionError> {
        if !cost.is_finite() || cost < 0.0 {
            return Err(ElectionError::InvalidCost(cost));
        }
        self.nodes.insert(a);
        self.nodes.insert(b);
        if a != b {
            self.costs.insert(ordered(a, b), cost);
        }
        Ok(())
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains(&id)
    }

    /// Cost between two nodes when they are in range of each other.
    pub fn get(&self, a: NodeId, b: NodeId) -> Option<f64> {
        if a == b {
            return self.nodes.contains(&a).then_some(0.0);
        }
        self.costs.get(&ordered(a, b)).copied()
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElectionParams {
    pub p_min: f64,
    pub max_rounds: u32,
    pub link_costs: LinkCosts,
}

impl ElectionParams {
    /// Uses the full round budget implied by `p_min`.
    pub fn new(p_min: f64, link_costs: LinkCosts) -> Result<Self, ElectionError> {
        let max_rounds = round_bound(p_min)?;
        Ok(Self {
            p_min,
            max_rounds,
            link_costs,
        })
    }

    /// Caps the round budget; never raises it above the bound implied by
    /// `p_min`.
    pub fn with_max_rounds(mut self, rounds: u32) -> Result<Self, ElectionError> {
        if rounds == 0 {
            return Err(ElectionError::ZeroRounds);
        }
        self.max_rounds = rounds.min(round_bound(self.p_min)?);
        Ok(self)
    }
}

/// `ceil(log2(1 / p_min)) + 1`, counted in exact doublings.
pub fn round_bound(p_min: f64) -> Result<u32, ElectionError> {
    if !(p_min > 0.0 && p_min <= 1.0) {
        return Err(ElectionError::InvalidFloor(p_min));
    }
    let mut p = p_min;
    let mut doublings = 0;
    while p < 1.0 {
        p *= 2.0;
        doublings += 1;
    }
    Ok(doublings + 1)
}

pub fn gm_probability(g_p: f64, power: &PowerState, p_min: f64) -> f64 {
    (g_p * power.fraction()).clamp(p_min, 1.0)
}

/// Announced status: Final exactly at probability 1.
pub fn node_status(g_p: f64) -> NodeStatus {
    if g_p >= 1.0 {
        NodeStatus::Final
    } else {
        NodeStatus::Tentative
    }
}

pub fn intra_cost(a: NodeId, b: NodeId, params: &ElectionParams) -> Result<f64, ElectionError> {
    for id in [a, b] {
        if !params.link_costs.contains(id) {
            return Err(ElectionError::UnknownNode(id));
        }
    }
    params.link_costs.get(a, b).ok_or(ElectionError::NoLink(a, b))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: GroupId,
    pub manager: NodeId,
    pub members: BTreeSet<NodeId>,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.members.len() + 1
    }
}

/// One status broadcast by a candidate during the election.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Announcement {
    pub round: u32,
    pub node: NodeId,
    pub status: NodeStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterAssignment {
    pub groups: Vec<Cluster>,
    #[serde(skip)]
    pub unassigned: BTreeSet<NodeId>,
    pub rounds_used: u32,
    #[serde(skip)]
    pub announcements: Vec<Announcement>,
}

impl ClusterAssignment {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("assignment serializes")
    }

    pub fn group_of(&self, node: NodeId) -> Option<&Cluster> {
        self.groups.iter().find(|c| c.manager == node || c.members.contains(&node))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Role {
    Undecided,
    TentativeGm,
    FinalGm,
    Provisional(NodeId),
    Member(NodeId),
}

struct Candidate {
    id: NodeId,
    prob: f64,
    role: Role,
}

impl Candidate {
    fn settled(&self) -> bool {
        matches!(self.role, Role::FinalGm | Role::Member(_))
    }
}

/// Cheapest announced manager in range; ties go to the lowest id.
fn cheapest(node: NodeId, managers: &BTreeSet<NodeId>, costs: &LinkCosts) -> Option<NodeId> {
    let mut best: Option<(f64, NodeId)> = None;
    for &m in managers {
        if let Some(c) = costs.get(node, m) {
            if best.is_none_or(|(bc, _)| c < bc) {
                best = Some((c, m));
            }
        }
    }
    best.map(|(_, m)| m)
}

/// Elects managers among the alive, non-blacklisted nodes. Group ids are
/// assigned from 1 in order of manager id.
pub fn run_election<R: Rng + ?Sized>(
    nodes: &[NodeRecord],
    params: &ElectionParams,
    rng: &mut R,
) -> Result<ClusterAssignment, ElectionError> {
    if !(params.p_min > 0.0 && params.p_min <= 1.0) {
        return Err(ElectionError::InvalidFloor(params.p_min));
    }
    if params.max_rounds == 0 {
        return Err(ElectionError::ZeroRounds);
    }
    let mut pool: Vec<Candidate> = nodes
        .iter()
        .filter(|n| n.is_alive() && !n.is_blacklisted())
        .map(|n| Candidate {
            id: n.id,
            prob: gm_probability(n.group_prob, &n.power, params.p_min),
            role: Role::Undecided,
        })
        .collect();
    if pool.is_empty() {
        return Err(ElectionError::NoAliveNodes);
    }
    pool.sort_by_key(|c| c.id);

    let costs = &params.link_costs;
    let mut tentative: BTreeSet<NodeId> = BTreeSet::new();
    let mut finals: BTreeSet<NodeId> = BTreeSet::new();
    let mut announcements = Vec::new();
    let mut rounds_used = 0;

    for round in 1..=params.max_rounds {
        rounds_used = round;
        let mut new_tentative = Vec::new();
        let mut new_final = Vec::new();

        for c in pool.iter_mut().filter(|c| !c.settled()) {
            if c.role == Role::TentativeGm {
                if node_status(c.prob) == NodeStatus::Final {
                    c.role = Role::FinalGm;
                    new_final.push(c.id);
                    announcements.push(Announcement {
                        round,
                        node: c.id,
                        status: NodeStatus::Final,
                    });
                }
                continue;
            }
            if let Some(gm) = cheapest(c.id, &finals, costs) {
                c.role = Role::Member(gm);
                continue;
            }
            if let Some(gm) = cheapest(c.id, &tentative, costs) {
                c.role = Role::Provisional(gm);
                continue;
            }
            let draw: f64 = rng.random();
            if draw < c.prob {
                let status = node_status(c.prob);
                announcements.push(Announcement { round, node: c.id, status });
                if status == NodeStatus::Final {
                    c.role = Role::FinalGm;
                    new_final.push(c.id);
                } else {
                    c.role = Role::TentativeGm;
                    new_tentative.push(c.id);
                }
            }
        }

        for id in new_final {
            tentative.remove(&id);
            finals.insert(id);
        }
        tentative.extend(new_tentative);

        for c in pool.iter_mut().filter(|c| !c.settled()) {
            c.prob = (c.prob * 2.0).min(1.0);
        }
        if pool.iter().all(Candidate::settled) {
            break;
        }
    }

    // Finalization.
    for c in pool.iter_mut() {
        if c.role == Role::TentativeGm {
            c.role = Role::FinalGm;
            finals.insert(c.id);
            announcements.push(Announcement {
                round: rounds_used,
                node: c.id,
                status: NodeStatus::Final,
            });
        }
    }
    for c in pool.iter_mut() {
        if let Role::Provisional(_) | Role::Undecided = c.role {
            match cheapest(c.id, &finals, costs) {
                Some(gm) => c.role = Role::Member(gm),
                None => {
                    c.role = Role::FinalGm;
                    finals.insert(c.id);
                    announcements.push(Announcement {
                        round: rounds_used,
                        node: c.id,
                        status: NodeStatus::Final,
                    });
                }
            }
        }
    }

    let mut by_manager: BTreeMap<NodeId, BTreeSet<NodeId>> = finals.iter().map(|&m| (m, BTreeSet::new())).collect();
    for c in &pool {
        if let Role::Member(gm) = c.role {
            by_manager.get_mut(&gm).expect("members join final managers").insert(c.id);
        }
    }
    let groups = by_manager
        .into_iter()
        .enumerate()
        .map(|(i, (manager, members))| Cluster {
            id: GroupId(i as u32 + 1),
            manager,
            members,
        })
        .collect();

    Ok(ClusterAssignment {
        groups,
        unassigned: BTreeSet::new(),
        rounds_used,
        announcements,
    })
}
