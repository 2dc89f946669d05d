use std::collections::{BTreeMap, BTreeSet};

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ChurnAction, ChurnEvent, ScenarioConfig};
use super::metrics::{MetricsReport, Scheme, Tally};
use super::{RecordedTranscript, ScenarioOutcome, SimError};
use crate::crypto::{verify_handshake, DhParams, HandshakeOutcome, Peer, VerifiedChannel};
use crate::detection::BeaconMonitor;
use crate::election::{run_election, ClusterAssignment, ElectionParams, LinkCosts};
use crate::keymgmt::{
    flat_join, handle_join, handle_leave, periodic_rekey, Group, GroupKeyEnvelope, Kdc, KeyRing, LeaveOutcome, MemberCredential,
    RekeyTranscript, MESSAGE_HEADER_LEN,
};
use crate::model::{create_node, Energy, GroupId, NodeId, NodeRecord, NodeStatus, PowerModel, PowerState, TraceEvent, TraceKind};

/// Status announcement broadcast during an election.
pub const ANNOUNCE_BYTES: u64 = 16;
/// Member to manager after an election.
pub const JOIN_REQUEST_BYTES: u64 = 16;
/// Manager to KDC, asking for a group key.
pub const KEY_REQUEST_BYTES: u64 = 16;

const TARGET_ATTEMPTS: u32 = 256;

mod stream {
    pub const POSITIONS: u64 = 1;
    pub const POWER: u64 = 2;
    pub const ELECTION: u64 = 3;
    pub const KDC: u64 = 4;
    pub const HANDSHAKE: u64 = 5;
    pub const REKEY: u64 = 6;
}

fn rng_stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Tick {
    Churn(ChurnAction),
    Beacon,
    Periodic,
}

impl Tick {
    fn priority(self) -> u8 {
        match self {
            Tick::Churn(ChurnAction::Leave) => 0,
            Tick::Churn(ChurnAction::Join) => 1,
            Tick::Churn(ChurnAction::Silence) => 2,
            Tick::Beacon => 3,
            Tick::Periodic => 5,
        }
    }
}

struct Engine<'a> {
    cfg: &'a ScenarioConfig,
    scheme: Scheme,
    power_model: PowerModel,
    dh: DhParams,
    now: u64,

    nodes: BTreeMap<NodeId, NodeRecord>,
    positions: BTreeMap<NodeId, (f64, f64)>,
    keyrings: BTreeMap<NodeId, KeyRing>,
    kdc: Kdc,
    groups: BTreeMap<GroupId, Group>,
    membership: BTreeMap<NodeId, GroupId>,
    monitors: BTreeMap<GroupId, BeaconMonitor>,
    kdc_monitor: BeaconMonitor,
    muted: BTreeSet<NodeId>,
    last_heard: BTreeMap<NodeId, u64>,
    blacklist: BTreeSet<NodeId>,
    next_group: u32,
    groups_formed: u64,

    election_rng: ChaCha8Rng,
    kdc_rng: ChaCha8Rng,
    handshake_rng: ChaCha8Rng,
    rekey_rng: ChaCha8Rng,

    trace: Vec<TraceEvent>,
    tally: Tally,
    transcripts: Vec<RecordedTranscript>,
    envelopes: Vec<GroupKeyEnvelope>,
    peak_key_bytes: u64,
}

pub(super) fn simulate(cfg: &ScenarioConfig, scheme: Scheme) -> Result<ScenarioOutcome, SimError> {
    cfg.validate()?;
    let mut e = Engine::new(cfg, scheme)?;
    e.run()?;
    Ok(e.finish())
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a ScenarioConfig, scheme: Scheme) -> Result<Self, SimError> {
        let mut pos_rng = rng_stream(cfg.seed, stream::POSITIONS);
        let mut power_rng = rng_stream(cfg.seed, stream::POWER);
        let mut kdc_rng = rng_stream(cfg.seed, stream::KDC);
        let mut kdc = Kdc::new(cfg.crypto.rsa_bits);
        let mut nodes = BTreeMap::new();
        let mut positions = BTreeMap::new();
        let mut keyrings = BTreeMap::new();
        let p = &cfg.power;
        for i in 0..cfg.total_nodes() {
            let id = NodeId(i);
            positions.insert(id, (pos_rng.random_range(0.0..cfg.region), pos_rng.random_range(0.0..cfg.region)));
            let p_ext = pos_or_point(&mut power_rng, p.p_ext_min, p.p_ext_max);
            let frac = pos_or_point(&mut power_rng, p.residual_min, p.residual_max);
            let mut node = create_node(id, p_ext, cfg.election.initial_prob)?;
            let cap = node.power.capacity();
            node.power = PowerState::new(Energy::from_joules(p_ext * frac).min(cap), cap)?;
            nodes.insert(id, node);
            let secret = kdc.register(id, &mut kdc_rng)?;
            keyrings.insert(id, KeyRing::new(id, secret));
        }
        let monitor = || BeaconMonitor::new(cfg.beacon.interval_ms, cfg.beacon.k_missed);
        Ok(Self {
            cfg,
            scheme,
            power_model: cfg.power.model(),
            dh: cfg.crypto.dh.params(),
            now: 0,
            nodes,
            positions,
            keyrings,
            kdc,
            groups: BTreeMap::new(),
            membership: BTreeMap::new(),
            monitors: BTreeMap::new(),
            kdc_monitor: monitor()?,
            muted: BTreeSet::new(),
            last_heard: BTreeMap::new(),
            blacklist: BTreeSet::new(),
            next_group: 1,
            groups_formed: 0,
            election_rng: rng_stream(cfg.seed, stream::ELECTION),
            kdc_rng,
            handshake_rng: rng_stream(cfg.seed, stream::HANDSHAKE),
            rekey_rng: rng_stream(cfg.seed, stream::REKEY),
            trace: Vec::new(),
            tally: Tally::default(),
            transcripts: Vec::new(),
            envelopes: Vec::new(),
            peak_key_bytes: 0,
        })
    }

    fn schedule(&self) -> Vec<(u64, Tick, u32, Option<ChurnEvent>)> {
        let mut ev: Vec<(u64, Tick, u32, Option<ChurnEvent>)> = self
            .cfg
            .ordered_churn()
            .into_iter()
            .map(|(_, c)| (c.time_ms, Tick::Churn(c.action), c.node, Some(c)))
            .collect();
        let d = self.cfg.duration_ms;
        let i = self.cfg.beacon.interval_ms;
        ev.extend((1..=d / i).map(|k| (k * i, Tick::Beacon, 0, None)));
        let p = self.cfg.periodic_rekey_ms;
        if let Some(count) = d.checked_div(p) {
            ev.extend((1..=count).map(|k| (k * p, Tick::Periodic, 0, None)));
        }
        ev.sort_by_key(|&(t, tick, node, _)| (t, tick.priority(), node));
        ev
    }

    fn run(&mut self) -> Result<(), SimError> {
        let initial: Vec<NodeId> = (0..self.cfg.node_count).map(NodeId).collect();
        for &n in &initial {
            self.last_heard.insert(n, 0);
        }
        match self.scheme {
            Scheme::HtRcf => self.elect(&initial, self.cfg.election.target_groups)?,
            Scheme::Baseline => self.form_flat(&initial)?,
        }
        self.update_peak();
        for (t, tick, _, churn) in self.schedule() {
            self.now = t;
            match (tick, churn) {
                (Tick::Churn(ChurnAction::Leave), Some(c)) => self.leave(NodeId(c.node))?,
                (Tick::Churn(ChurnAction::Join), Some(c)) => self.join(NodeId(c.node))?,
                (Tick::Churn(ChurnAction::Silence), Some(c)) => {
                    debug!("t={t} {} goes silent", NodeId(c.node));
                    self.muted.insert(NodeId(c.node));
                }
                (Tick::Beacon, _) => self.beacon_tick()?,
                (Tick::Periodic, _) => self.periodic_tick()?,
                _ => unreachable!("churn ticks carry their event"),
            }
            self.update_peak();
        }
        Ok(())
    }

    fn finish(self) -> ScenarioOutcome {
        let report = MetricsReport::from_tally(
            self.scheme,
            self.cfg.digest(),
            self.cfg.seed,
            &self.tally,
            self.groups_formed,
            self.groups.len() as u64,
            self.peak_key_bytes,
        );
        info!(
            "{}: t_pow {:.3} J, {} rekeys, {} blacklisted",
            self.scheme.label(),
            report.t_pow,
            report.rekey_count,
            report.blacklist_count
        );
        ScenarioOutcome {
            scheme: self.scheme,
            trace: self.trace,
            report,
            tally: self.tally,
            transcripts: self.transcripts,
            envelopes: self.envelopes,
            keyrings: self.keyrings,
            groups: self.groups.into_values().collect(),
            blacklist: self.blacklist,
            nodes: self.nodes,
        }
    }

    // ---- accounting ----

    fn push(&mut self, ev: TraceEvent, group: Option<GroupId>) {
        self.tally.record(&ev, &self.cfg.link, group);
        self.trace.push(ev);
    }

    fn marker(&mut self, kind: TraceKind, node: NodeId, bytes: u64) {
        self.push(TraceEvent::marker(self.now, kind, node, bytes), None);
    }

    fn transmit(&mut self, node: NodeId, bytes: u64, kind: TraceKind, group: Option<GroupId>) {
        let cost = self.power_model.send_cost(bytes);
        let ev = if node.is_kdc() {
            TraceEvent {
                time: self.now,
                kind,
                node,
                bytes,
                energy: cost,
            }
        } else {
            let rec = self.nodes.get_mut(&node).expect("known node");
            rec.consume_power(cost, kind, self.now, bytes)
        };
        self.push(ev, group);
    }

    fn receive(&mut self, node: NodeId, bytes: u64, group: Option<GroupId>) {
        let cost = self.power_model.recv_cost(bytes);
        let ev = if node.is_kdc() {
            TraceEvent {
                time: self.now,
                kind: TraceKind::Receive,
                node,
                bytes,
                energy: cost,
            }
        } else {
            let rec = self.nodes.get_mut(&node).expect("known node");
            if !rec.is_alive() {
                return;
            }
            rec.consume_power(cost, TraceKind::Receive, self.now, bytes)
        };
        self.push(ev, group);
    }

    fn unicast(&mut self, from: NodeId, to: NodeId, bytes: u64, group: Option<GroupId>) {
        self.transmit(from, bytes, TraceKind::Send, group);
        self.receive(to, bytes, group);
    }

    fn update_peak(&mut self) {
        for (id, ring) in &self.keyrings {
            let mut bytes = ring.current_bytes();
            if let Some(g) = self.membership.get(id).and_then(|g| self.groups.get(g)) {
                if g.manager == *id {
                    bytes += g.credential_count() as u64 * MemberCredential::WIRE_LEN;
                }
            }
            self.peak_key_bytes = self.peak_key_bytes.max(bytes);
        }
    }

    // ---- topology ----

    fn cost(&self, a: NodeId, b: NodeId) -> Option<f64> {
        let (ax, ay) = self.positions[&a];
        let (bx, by) = self.positions[&b];
        let d = (ax - bx).hypot(ay - by);
        match self.cfg.radio_range {
            Some(r) if d > r => None,
            _ => Some(d),
        }
    }

    fn link_costs(&self, pool: &[NodeId]) -> Result<LinkCosts, SimError> {
        let mut lc = LinkCosts::new();
        for (i, &a) in pool.iter().enumerate() {
            lc.add_node(a);
            for &b in &pool[i + 1..] {
                if let Some(c) = self.cost(a, b) {
                    lc.insert(a, b, c)?;
                }
            }
        }
        Ok(lc)
    }

    fn responsive(&self, node: NodeId) -> bool {
        node.is_kdc() || (self.nodes[&node].is_alive() && !self.muted.contains(&node) && !self.blacklist.contains(&node))
    }

    fn alloc_group(&mut self) -> GroupId {
        let g = GroupId(self.next_group);
        self.next_group += 1;
        self.groups_formed += 1;
        g
    }

    // ---- group formation ----

    /// Runs an election over `pool` and forms its groups. With a target,
    /// repeats the election until the group count matches.
    fn elect(&mut self, pool: &[NodeId], target: Option<u32>) -> Result<(), SimError> {
        for &n in pool {
            self.nodes.get_mut(&n).expect("known node").reset_episode()?;
        }
        let records: Vec<NodeRecord> = pool.iter().map(|n| self.nodes[n].clone()).collect();
        let mut params = ElectionParams::new(self.cfg.election.p_min, self.link_costs(pool)?)?;
        if let Some(r) = self.cfg.election.max_rounds {
            params = params.with_max_rounds(r)?;
        }
        let mut best = run_election(&records, &params, &mut self.election_rng)?;
        if let Some(target) = target {
            let miss = |a: &ClusterAssignment| (a.groups.len() as i64 - target as i64).abs();
            let mut attempts = 1;
            while miss(&best) > 0 && attempts < TARGET_ATTEMPTS {
                let next = run_election(&records, &params, &mut self.election_rng)?;
                if miss(&next) < miss(&best) {
                    best = next;
                }
                attempts += 1;
            }
            debug!("election: {} groups after {attempts} attempts", best.groups.len());
        }
        self.apply_assignment(pool, best)
    }

    fn apply_assignment(&mut self, pool: &[NodeId], assignment: ClusterAssignment) -> Result<(), SimError> {
        let gids: BTreeMap<NodeId, GroupId> = assignment.groups.iter().map(|c| (c.manager, self.alloc_group())).collect();
        let tentative: BTreeSet<NodeId> = assignment
            .announcements
            .iter()
            .filter(|a| a.status == NodeStatus::Tentative)
            .map(|a| a.node)
            .collect();
        // A lone node has nobody to announce to.
        if pool.len() > 1 {
            for a in &assignment.announcements {
                let g = gids.get(&a.node).copied();
                self.transmit(a.node, ANNOUNCE_BYTES, TraceKind::Send, g);
                for &other in pool {
                    if other != a.node && self.cost(a.node, other).is_some() {
                        self.receive(other, ANNOUNCE_BYTES, g);
                    }
                }
            }
        }
        for c in &assignment.groups {
            let gid = gids[&c.manager];
            for &n in c.members.iter().chain([&c.manager]) {
                let node = self.nodes.get_mut(&n).expect("known node");
                if tentative.contains(&n) {
                    node.transition(NodeStatus::Tentative)?;
                }
                node.transition(if n == c.manager {
                    NodeStatus::GroupManager
                } else {
                    NodeStatus::Final
                })?;
            }
            self.marker(TraceKind::Elect, c.manager, 0);
            if pool.len() > 1 {
                for &m in &c.members {
                    self.unicast(m, c.manager, JOIN_REQUEST_BYTES, Some(gid));
                }
            }
            self.form_group(gid, c.manager, &c.members)?;
        }
        Ok(())
    }

    /// KDC issuance for a freshly elected group, then distribution by the
    /// manager.
    fn form_group(&mut self, gid: GroupId, gm: NodeId, members: &BTreeSet<NodeId>) -> Result<(), SimError> {
        let members_v: Vec<NodeId> = members.iter().copied().collect();
        self.unicast(gm, NodeId::KDC, KEY_REQUEST_BYTES, Some(gid));
        let env = self.kdc.issue_group_key(gid, gm, &members_v, &mut self.kdc_rng)?;
        self.unicast(NodeId::KDC, gm, env.wire_len(), Some(gid));
        let cred_bytes = if members.is_empty() {
            0
        } else {
            MESSAGE_HEADER_LEN + MemberCredential::WIRE_LEN * members.len() as u64
        };
        if cred_bytes > 0 {
            self.unicast(NodeId::KDC, gm, cred_bytes, Some(gid));
        }
        let private = self.kdc.rsa_keypair(gm)?.private();
        let key = env.open(&private)?;
        let creds = members_v
            .iter()
            .map(|&m| Ok((m, self.kdc.credential(gm, m)?)))
            .collect::<Result<BTreeMap<_, _>, SimError>>()?;
        let group = Group::new(gid, gm, Some(self.kdc.digest_of(gm)?), creds, key.clone())?;
        self.keyrings.get_mut(&gm).expect("known node").install(gid, gm, key);
        let tr = group.distribute_issued(&mut self.rekey_rng);
        let env_bytes = env.wire_len();
        self.envelopes.push(env);
        self.install_group(group, gm, members);
        self.deliver(&tr)?;
        self.marker(TraceKind::Rekey, gm, env_bytes + cred_bytes + tr.total_bytes());
        self.record(tr);
        Ok(())
    }

    /// One flat group managed by the KDC itself.
    fn form_flat(&mut self, pool: &[NodeId]) -> Result<(), SimError> {
        let gid = self.alloc_group();
        for &n in pool {
            let node = self.nodes.get_mut(&n).expect("known node");
            node.reset_episode()?;
            node.transition(NodeStatus::Final)?;
        }
        let key = self.kdc.issue_direct(gid, pool, &mut self.kdc_rng)?;
        let creds = pool
            .iter()
            .map(|&m| Ok((m, self.kdc.credential(NodeId::KDC, m)?)))
            .collect::<Result<BTreeMap<_, _>, SimError>>()?;
        let group = Group::new(gid, NodeId::KDC, None, creds, key)?;
        let tr = group.distribute_issued(&mut self.rekey_rng);
        self.install_group(group, NodeId::KDC, &pool.iter().copied().collect());
        self.deliver(&tr)?;
        self.marker(TraceKind::Rekey, NodeId::KDC, tr.total_bytes());
        self.record(tr);
        Ok(())
    }

    fn install_group(&mut self, group: Group, manager: NodeId, members: &BTreeSet<NodeId>) {
        let gid = group.id;
        let mut mon = BeaconMonitor::new(self.cfg.beacon.interval_ms, self.cfg.beacon.k_missed).expect("validated beacon params");
        for &m in members {
            mon.track_since(m, self.last_heard.get(&m).copied().unwrap_or(self.now));
            self.membership.insert(m, gid);
        }
        if !manager.is_kdc() {
            self.kdc_monitor
                .track_since(manager, self.last_heard.get(&manager).copied().unwrap_or(self.now));
            self.membership.insert(manager, gid);
        }
        self.monitors.insert(gid, mon);
        self.groups.insert(gid, group);
    }

    /// Re-forms groups after a dissolution. Silent or drained nodes cannot
    /// take part in an election; the KDC keeps watching them instead.
    fn reform(&mut self, remaining: &BTreeSet<NodeId>) -> Result<(), SimError> {
        let mut pool = Vec::new();
        for &n in remaining {
            if self.blacklist.contains(&n) {
                continue;
            }
            if self.responsive(n) {
                pool.push(n);
            } else {
                self.kdc_monitor
                    .track_since(n, self.last_heard.get(&n).copied().unwrap_or(self.now));
            }
        }
        if pool.is_empty() {
            return Ok(());
        }
        match self.scheme {
            Scheme::HtRcf => self.elect(&pool, None),
            Scheme::Baseline => self.form_flat(&pool),
        }
    }

    // ---- key delivery ----

    fn deliver(&mut self, tr: &RekeyTranscript) -> Result<(), SimError> {
        self.deliver_from(tr.manager, tr)
    }

    /// Puts a transcript on the air from `sender`, which is the manager
    /// unless the KDC stands in for a silent one.
    fn deliver_from(&mut self, sender: NodeId, tr: &RekeyTranscript) -> Result<(), SimError> {
        for msg in &tr.messages {
            let bytes = msg.wire_len();
            self.transmit(sender, bytes, TraceKind::Send, Some(tr.group));
            for &to in &msg.audience {
                self.receive(to, bytes, Some(tr.group));
                self.keyrings.get_mut(&to).expect("known node").accept(tr.group, tr.manager, msg)?;
            }
        }
        Ok(())
    }

    fn record(&mut self, transcript: RekeyTranscript) {
        self.transcripts.push(RecordedTranscript {
            seq: self.transcripts.len() as u64,
            time: self.now,
            transcript,
        });
    }

    /// Bookkeeping after a manager-side rekey: the KDC learns the new epoch
    /// and the manager installs the key it derived.
    fn adopt_rekey(&mut self, gid: GroupId) -> Result<(), SimError> {
        let g = &self.groups[&gid];
        let (manager, key) = (g.manager, g.key().clone());
        self.kdc.record_rekey(gid, &key)?;
        if !manager.is_kdc() && self.responsive(manager) {
            self.keyrings.get_mut(&manager).expect("known node").install(gid, manager, key);
        }
        Ok(())
    }

    // ---- membership changes ----

    fn detach(&mut self, node: NodeId, gid: GroupId) {
        self.membership.remove(&node);
        self.keyrings.get_mut(&node).expect("known node").clear_group();
        if let Some(m) = self.monitors.get_mut(&gid) {
            m.forget(node);
        }
        self.kdc_monitor.forget(node);
    }

    fn remove_member(&mut self, node: NodeId, blacklisted: bool) -> Result<(), SimError> {
        let Some(&gid) = self.membership.get(&node) else {
            return Ok(());
        };
        let group = self.groups.get_mut(&gid).expect("membership points at a live group");
        let outcome = handle_leave(group, node, blacklisted, &mut self.rekey_rng)?;
        self.detach(node, gid);
        match outcome {
            LeaveOutcome::Rekeyed(tr) => {
                // The KDC holds every member credential and can rekey for
                // a manager that has gone quiet.
                let sender = if self.responsive(tr.manager) { tr.manager } else { NodeId::KDC };
                self.adopt_rekey(gid)?;
                self.deliver_from(sender, &tr)?;
                self.marker(TraceKind::Rekey, sender, tr.total_bytes());
                self.record(tr);
            }
            LeaveOutcome::Dissolved { remaining } => {
                debug!("t={} {gid} dissolved", self.now);
                let group = self.groups.remove(&gid).expect("live group");
                self.monitors.remove(&gid);
                for &r in remaining.iter().chain([&group.manager]) {
                    if self.membership.get(&r) == Some(&gid) {
                        self.detach(r, gid);
                    }
                }
                self.reform(&remaining)?;
            }
        }
        Ok(())
    }

    fn leave(&mut self, node: NodeId) -> Result<(), SimError> {
        if !self.membership.contains_key(&node) {
            debug!("t={} {node} cannot leave: not in a group", self.now);
            return Ok(());
        }
        self.marker(TraceKind::Leave, node, 0);
        self.remove_member(node, false)?;
        self.nodes.get_mut(&node).expect("known node").reset_episode()?;
        self.last_heard.remove(&node);
        Ok(())
    }

    fn blacklist_node(&mut self, node: NodeId) -> Result<(), SimError> {
        if !self.blacklist.insert(node) {
            return Ok(());
        }
        debug!("t={} {node} blacklisted", self.now);
        self.nodes.get_mut(&node).expect("known node").transition(NodeStatus::Blacklisted)?;
        self.kdc_monitor.report_dangerous(node);
        if let Some(m) = self.membership.get(&node).and_then(|g| self.monitors.get_mut(g)) {
            m.report_dangerous(node);
        }
        self.marker(TraceKind::Blacklist, node, 0);
        self.remove_member(node, true)
    }

    fn join(&mut self, node: NodeId) -> Result<(), SimError> {
        if self.blacklist.contains(&node) || self.membership.contains_key(&node) {
            debug!("t={} {node} cannot join", self.now);
            return Ok(());
        }
        self.marker(TraceKind::Join, node, 0);
        self.last_heard.insert(node, self.now);
        let target = match self.scheme {
            Scheme::HtRcf => self
                .groups
                .values()
                .filter(|g| !g.manager.is_kdc() && self.responsive(g.manager))
                .filter_map(|g| self.cost(node, g.manager).map(|c| (c, g.manager, g.id)))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, _, g)| g),
            Scheme::Baseline => self.groups.keys().next().copied(),
        };
        let responder = target.map_or(NodeId::KDC, |g| self.groups[&g].manager);
        let hs = verify_handshake(
            Peer {
                id: node,
                behavior: self.cfg.behavior_of(node),
            },
            Peer::honest(responder),
            &self.dh,
            &mut self.handshake_rng,
        );
        for m in &hs.messages {
            self.unicast(m.from, m.to, m.bytes, target);
        }
        let channel = match hs.outcome {
            HandshakeOutcome::Verified(ch) => ch,
            HandshakeOutcome::Rejected { suspect, reason, .. } => {
                debug!("t={} handshake {node}<->{responder} rejected: {reason:?}", self.now);
                if suspect.is_kdc() {
                    return Ok(());
                }
                return self.blacklist_node(suspect);
            }
        };
        self.keyrings
            .get_mut(&node)
            .expect("known node")
            .add_channel(responder, *channel.key());
        if !responder.is_kdc() {
            self.keyrings
                .get_mut(&responder)
                .expect("known node")
                .add_channel(node, *channel.key());
        }
        match target {
            Some(gid) => self.admit(node, gid, &channel),
            None => {
                let solo: BTreeSet<NodeId> = [node].into();
                match self.scheme {
                    Scheme::HtRcf => self.reform(&solo),
                    Scheme::Baseline => self.form_flat(&[node]),
                }
            }
        }
    }

    fn admit(&mut self, node: NodeId, gid: GroupId, channel: &VerifiedChannel) -> Result<(), SimError> {
        let manager = self.groups[&gid].manager;
        let cred = self.kdc.credential(manager, node)?;
        let cred_bytes = if manager.is_kdc() {
            0
        } else {
            let b = MESSAGE_HEADER_LEN + MemberCredential::WIRE_LEN;
            self.unicast(NodeId::KDC, manager, b, Some(gid));
            b
        };
        let group = self.groups.get_mut(&gid).expect("live group");
        let tr = match self.scheme {
            Scheme::HtRcf => handle_join(group, &self.nodes[&node], cred, channel, &mut self.rekey_rng)?,
            Scheme::Baseline => flat_join(group, &self.nodes[&node], cred, channel, &mut self.rekey_rng)?,
        };
        self.nodes.get_mut(&node).expect("known node").transition(NodeStatus::Final)?;
        self.membership.insert(node, gid);
        self.monitors.get_mut(&gid).expect("live group").track_since(node, self.now);
        self.adopt_rekey(gid)?;
        self.deliver(&tr)?;
        self.marker(TraceKind::Rekey, manager, cred_bytes + tr.total_bytes());
        self.record(tr);
        Ok(())
    }

    // ---- periodic activity ----

    fn beacon_tick(&mut self) -> Result<(), SimError> {
        let bytes = self.cfg.beacon.bytes;
        let senders: Vec<(NodeId, GroupId)> = self.membership.iter().map(|(&n, &g)| (n, g)).collect();
        for (node, gid) in senders {
            if !self.responsive(node) {
                continue;
            }
            let manager = self.groups[&gid].manager;
            let dest = if manager == node { NodeId::KDC } else { manager };
            self.transmit(node, bytes, TraceKind::Beacon, Some(gid));
            self.receive(dest, bytes, Some(gid));
            self.last_heard.insert(node, self.now);
            if manager == node {
                self.kdc_monitor.record_beacon(node, self.now)?;
            } else {
                self.monitors.get_mut(&gid).expect("live group").record_beacon(node, self.now)?;
            }
        }
        self.sweep()
    }

    /// Sweeps every group monitor and the KDC's until no new node is
    /// listed; re-formed groups may inherit nodes that are already overdue.
    fn sweep(&mut self) -> Result<(), SimError> {
        loop {
            let mut newly = BTreeSet::new();
            let gids: Vec<GroupId> = self.monitors.keys().copied().collect();
            for gid in gids {
                newly.extend(self.monitors.get_mut(&gid).expect("listed").sweep(self.now));
            }
            newly.extend(self.kdc_monitor.sweep(self.now));
            if newly.is_empty() {
                return Ok(());
            }
            for n in newly {
                self.blacklist_node(n)?;
            }
        }
    }

    fn periodic_tick(&mut self) -> Result<(), SimError> {
        let gids: Vec<GroupId> = self.groups.keys().copied().collect();
        for gid in gids {
            let g = &self.groups[&gid];
            if g.member_count() == 0 || !self.responsive(g.manager) {
                continue;
            }
            let tr = periodic_rekey(self.groups.get_mut(&gid).expect("live group"), &mut self.rekey_rng)?;
            self.adopt_rekey(gid)?;
            self.deliver(&tr)?;
            self.marker(TraceKind::Rekey, tr.manager, tr.total_bytes());
            self.record(tr);
        }
        Ok(())
    }
}

fn pos_or_point<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}
