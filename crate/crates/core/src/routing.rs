//! Proactive link-state routing.
//!
//! Neighbor sensing uses periodic HELLOs that also serve as link-quality
//! probes. Topology control (TC) and gateway (HNA) announcements are flooded
//! to every node; each node runs a shortest-path computation over the
//! advertised link costs and keeps its incumbent routes unless a candidate is
//! cheaper by the hysteresis margin. Transmission failures are handled by a
//! route maintainer that suppresses historically good links temporarily
//! instead of tearing routes down.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{record_probe, ElpParams, LinkStats, Metric, ProbeDirection};
use crate::scalar::{sum_in_order, Scalar};
use crate::topology::{Channel, LinkId, NodeId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error("no gateway announcement has been received")]
    NoGateway,
}

/// How the network layer reacts to a link-layer failure notification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaintenanceMode {
    /// Long-term-aware: suppress good links, demote bad ones.
    #[default]
    Maintainer,
    /// Every failure is a broken link: purge, re-flood, recompute.
    Breakage,
    /// Failures are only counted.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoutingParams {
    pub hello_interval: f64,
    pub tc_interval: f64,
    /// Entry lifetime as a multiple of the emitting interval.
    pub hold_multiplier: f64,
    pub hysteresis: f64,
    pub maintenance: MaintenanceMode,
    /// Long-term score at or above which a failing link is only suppressed.
    pub theta: f64,
    pub suppress_dur: f64,
    pub max_strikes: u32,
    pub strike_window: f64,
    /// Smoothing weight of the long-term link score.
    pub long_term_alpha: f64,
    pub ttl: u8,
}

impl Default for RoutingParams {
    fn default() -> Self {
        Self {
            hello_interval: 1.0,
            tc_interval: 5.0,
            hold_multiplier: 3.0,
            hysteresis: 0.1,
            maintenance: MaintenanceMode::Maintainer,
            theta: 0.7,
            suppress_dur: 10.0,
            max_strikes: 3,
            strike_window: 60.0,
            long_term_alpha: 0.02,
            ttl: 32,
        }
    }
}

impl RoutingParams {
    pub fn neighbor_hold(&self) -> f64 {
        self.hold_multiplier * self.hello_interval
    }

    pub fn topology_hold(&self) -> f64 {
        self.hold_multiplier * self.tc_interval
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.hello_interval > 0.0) || !(self.tc_interval > 0.0) {
            errs.push("routing intervals must be positive".into());
        }
        if !(self.hold_multiplier >= 1.0) {
            errs.push("routing.hold_multiplier must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.hysteresis) {
            errs.push("routing.hysteresis must lie in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.theta) {
            errs.push("routing.theta must lie in [0, 1]".into());
        }
        if !(self.suppress_dur > 0.0) {
            errs.push("routing.suppress_dur must be positive".into());
        }
        if !(self.long_term_alpha > 0.0 && self.long_term_alpha <= 1.0) {
            errs.push("routing.long_term_alpha must lie in (0, 1]".into());
        }
        if self.ttl == 0 {
            errs.push("routing.ttl must be positive".into());
        }
        errs
    }
}

// ---------------------------------------------------------------------------
// Control messages

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeardNeighbor {
    pub node: NodeId,
    pub link: LinkId,
    /// The HELLO sender's measured delivery ratio from `node`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub sender: NodeId,
    pub channel: Channel,
    pub seq: u32,
    pub heard: Vec<HeardNeighbor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvertisedLink<T> {
    pub to: NodeId,
    pub link: LinkId,
    pub cost: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tc<T> {
    pub originator: NodeId,
    pub seq: u32,
    pub links: Vec<AdvertisedLink<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hna {
    pub originator: NodeId,
    pub seq: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FloodVerdict {
    /// Accepted; re-broadcast once.
    Fresh,
    Duplicate,
    Stale,
}

// ---------------------------------------------------------------------------
// Link-state database

#[derive(Debug, Clone, PartialEq)]
pub struct DbEntry<T> {
    pub seq: u32,
    pub links: Vec<AdvertisedLink<T>>,
    pub expires: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkStateDb<T> {
    entries: BTreeMap<NodeId, DbEntry<T>>,
    hna: BTreeMap<NodeId, DbEntry<T>>,
}

impl<T> Default for LinkStateDb<T> {
    fn default() -> Self {
        Self {
            entries: BTreeMap::new(),
            hna: BTreeMap::new(),
        }
    }
}

fn apply_seq<T>(map: &mut BTreeMap<NodeId, DbEntry<T>>, origin: NodeId, entry: DbEntry<T>) -> FloodVerdict {
    match map.get(&origin) {
        Some(old) if entry.seq == old.seq => FloodVerdict::Duplicate,
        Some(old) if entry.seq < old.seq => FloodVerdict::Stale,
        _ => {
            map.insert(origin, entry);
            FloodVerdict::Fresh
        }
    }
}

impl<T: Scalar> LinkStateDb<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Newer sequence numbers replace older ones; equal ones are duplicates.
    pub fn apply_tc(&mut self, tc: &Tc<T>, expires: f64) -> FloodVerdict {
        apply_seq(
            &mut self.entries,
            tc.originator,
            DbEntry {
                seq: tc.seq,
                links: tc.links.clone(),
                expires,
            },
        )
    }

    pub fn apply_hna(&mut self, hna: &Hna, expires: f64) -> FloodVerdict {
        apply_seq(
            &mut self.hna,
            hna.originator,
            DbEntry {
                seq: hna.seq,
                links: Vec::new(),
                expires,
            },
        )
    }

    /// Installs a node's own links; never expires.
    pub fn set_local(&mut self, node: NodeId, links: Vec<AdvertisedLink<T>>) {
        let seq = self.entries.get(&node).map_or(0, |e| e.seq);
        self.entries.insert(
            node,
            DbEntry {
                seq,
                links,
                expires: f64::INFINITY,
            },
        );
    }

    /// Drops expired entries' links. Sequence numbers are kept so that late
    /// copies of old floods are still recognized.
    pub fn purge(&mut self, now: f64) -> bool {
        let mut changed = false;
        for e in self.entries.values_mut() {
            if e.expires < now && !e.links.is_empty() {
                e.links.clear();
                changed = true;
            }
        }
        changed
    }

    pub fn remove_link(&mut self, node: NodeId, link: LinkId) {
        if let Some(e) = self.entries.get_mut(&node) {
            e.links.retain(|l| l.link != link);
        }
    }

    pub fn entry(&self, node: NodeId) -> Option<&DbEntry<T>> {
        self.entries.get(&node)
    }

    pub fn gateways(&self, now: f64) -> impl Iterator<Item = NodeId> + '_ {
        self.hna.iter().filter(move |(_, e)| e.expires >= now).map(|(n, _)| *n)
    }

    /// All directed edges `(from, link, to, cost)` in deterministic order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, &AdvertisedLink<T>)> + '_ {
        self.entries.iter().flat_map(|(n, e)| e.links.iter().map(move |l| (*n, l)))
    }
}

// ---------------------------------------------------------------------------
// Route computation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteEntry<T> {
    pub dest: NodeId,
    pub next_hop: NodeId,
    pub next_link: LinkId,
    pub path_cost: T,
    pub path: Vec<NodeId>,
    pub links: Vec<LinkId>,
    pub installed_at: f64,
}

impl<T> RouteEntry<T> {
    pub fn hops(&self) -> usize {
        self.links.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingTable<T> {
    pub owner: NodeId,
    pub routes: BTreeMap<NodeId, RouteEntry<T>>,
}

impl<T: Scalar> RoutingTable<T> {
    pub fn new(owner: NodeId) -> Self {
        Self {
            owner,
            routes: BTreeMap::new(),
        }
    }

    pub fn get(&self, dest: NodeId) -> Option<&RouteEntry<T>> {
        self.routes.get(&dest)
    }

    /// Checks that each path starts here, ends at its destination, repeats
    /// no node, and agrees with the next hop.
    pub fn is_loop_free(&self) -> bool {
        self.routes.values().all(|r| {
            let mut seen = BTreeSet::new();
            r.path.first() == Some(&self.owner)
                && r.path.last() == Some(&r.dest)
                && r.path.get(1) == Some(&r.next_hop)
                && r.links.first() == Some(&r.next_link)
                && r.path.len() == r.links.len() + 1
                && r.path.iter().all(|n| seen.insert(*n))
        })
    }

    /// Rows `dest, next_hop, cost, hops, path` for table dumps.
    pub fn dump(&self) -> String {
        let mut out = String::from("dest,next_hop,cost,hops,path\n");
        for r in self.routes.values() {
            let path: Vec<String> = r.path.iter().map(|n| n.to_string()).collect();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.dest,
                r.next_hop,
                r.path_cost.as_f64(),
                r.hops(),
                path.join("-")
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
struct Label<T> {
    cost: T,
    path: Vec<NodeId>,
    links: Vec<LinkId>,
}

impl<T: Scalar> Label<T> {
    /// Lower cost, then fewer hops, then lexicographically smaller path.
    fn better_than(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Less
    }

    fn key_cmp(&self, other: &Self) -> Ordering {
        self.cost
            .partial_cmp(&other.cost)
            .unwrap_or(Ordering::Equal)
            .then_with(|| self.links.len().cmp(&other.links.len()))
            .then_with(|| self.path.cmp(&other.path))
            .then_with(|| self.links.cmp(&other.links))
    }
}

struct HeapItem<T>(Label<T>);

impl<T: Scalar> PartialEq for HeapItem<T> {
    fn eq(&self, other: &Self) -> bool {
        self.0.key_cmp(&other.0) == Ordering::Equal
    }
}
impl<T: Scalar> Eq for HeapItem<T> {}
impl<T: Scalar> PartialOrd for HeapItem<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar> Ord for HeapItem<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.key_cmp(&self.0)
    }
}

/// Shortest-path tree from `source` over the database's advertised edges.
///
/// Costs accumulate left to right along the path, so each entry's
/// `path_cost` equals [`crate::metrics::elp_path`] of its link costs.
pub fn compute_routes<T: Scalar>(db: &LinkStateDb<T>, metric: Metric, source: NodeId) -> RoutingTable<T> {
    compute_routes_excluding(db, metric, source, |_, _| false)
}

/// As [`compute_routes`], skipping edges for which `skip(from, link)` holds.
pub fn compute_routes_excluding<T: Scalar>(
    db: &LinkStateDb<T>,
    metric: Metric,
    source: NodeId,
    skip: impl Fn(NodeId, LinkId) -> bool,
) -> RoutingTable<T> {
    let mut adjacency: BTreeMap<NodeId, Vec<(NodeId, LinkId, T)>> = BTreeMap::new();
    for (from, l) in db.edges() {
        if l.to == from || skip(from, l.link) {
            continue;
        }
        let cost = match metric {
            Metric::Elp => l.cost,
            Metric::HopCount => T::one(),
        };
        adjacency.entry(from).or_default().push((l.to, l.link, cost));
    }

    let mut best: BTreeMap<NodeId, Label<T>> = BTreeMap::new();
    let mut done: BTreeSet<NodeId> = BTreeSet::new();
    let mut heap = BinaryHeap::new();
    let start = Label {
        cost: T::zero(),
        path: vec![source],
        links: Vec::new(),
    };
    best.insert(source, start.clone());
    heap.push(HeapItem(start));

    while let Some(HeapItem(label)) = heap.pop() {
        let node = *label.path.last().expect("non-empty path");
        if done.contains(&node) {
            continue;
        }
        if best.get(&node).is_some_and(|b| b.key_cmp(&label) != Ordering::Equal) {
            continue;
        }
        done.insert(node);
        let Some(edges) = adjacency.get(&node) else {
            continue;
        };
        for &(to, link, cost) in edges {
            if done.contains(&to) || label.path.contains(&to) {
                continue;
            }
            let mut path = label.path.clone();
            path.push(to);
            let mut links = label.links.clone();
            links.push(link);
            let cand = Label {
                cost: label.cost + cost,
                path,
                links,
            };
            if best.get(&to).map_or(true, |b| cand.better_than(b)) {
                best.insert(to, cand.clone());
                heap.push(HeapItem(cand));
            }
        }
    }

    let routes = best
        .into_iter()
        .filter(|(n, _)| *n != source)
        .map(|(dest, l)| {
            (
                dest,
                RouteEntry {
                    dest,
                    next_hop: l.path[1],
                    next_link: l.links[0],
                    path_cost: l.cost,
                    path: l.path,
                    links: l.links,
                    installed_at: 0.0,
                },
            )
        })
        .collect();
    RoutingTable { owner: source, routes }
}

/// Current cost of following `links` from `path[0]`, or `None` if an edge is
/// no longer advertised.
pub fn revalue_path<T: Scalar>(
    db: &LinkStateDb<T>,
    metric: Metric,
    path: &[NodeId],
    links: &[LinkId],
    skip: impl Fn(NodeId, LinkId) -> bool,
) -> Option<T> {
    let mut costs = Vec::with_capacity(links.len());
    for (w, &link) in path.windows(2).zip(links) {
        if skip(w[0], link) {
            return None;
        }
        let e = db.entry(w[0])?;
        let adv = e.links.iter().find(|l| l.link == link && l.to == w[1])?;
        costs.push(match metric {
            Metric::Elp => adv.cost,
            Metric::HopCount => T::one(),
        });
    }
    Some(sum_in_order(costs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SwitchDecision {
    Keep,
    Switch,
}

/// Hysteresis rule. `current` is `None` when the incumbent is no longer
/// usable (its next hop vanished), which forces a switch.
pub fn maybe_switch_route<T: Scalar>(
    current: Option<&RouteEntry<T>>,
    candidate: &RouteEntry<T>,
    h: T,
) -> SwitchDecision {
    match current {
        None => SwitchDecision::Switch,
        Some(cur) if candidate.path_cost < cur.path_cost * (T::one() - h) => SwitchDecision::Switch,
        Some(_) => SwitchDecision::Keep,
    }
}

// ---------------------------------------------------------------------------
// Per-node protocol state

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub node: NodeId,
    pub link: LinkId,
    pub channel: Channel,
    pub last_heard: f64,
    pub last_seq: u32,
    pub symmetric: bool,
    pub stats: LinkStats<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuppressionEntry {
    pub suppressed_until: f64,
    pub recent_failures: u32,
    /// Suppression start times within the strike window.
    pub strikes: VecDeque<f64>,
    pub long_term_score: f64,
}

impl SuppressionEntry {
    fn new() -> Self {
        Self {
            suppressed_until: f64::NEG_INFINITY,
            recent_failures: 0,
            strikes: VecDeque::new(),
            long_term_score: 1.0,
        }
    }
}

/// Per-link long-term state used by the maintainer.
pub type SuppressionList = BTreeMap<LinkId, SuppressionEntry>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum MaintenanceAction {
    /// Counted only; no route was using the link or maintenance is off.
    Bookkeeping,
    /// Temporarily avoided locally; no topology change is flooded.
    Suppress { until: f64 },
    /// Declared down: purged, re-flooded and recomputed.
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FloodReason {
    Periodic,
    NeighborLoss,
    LinkDown,
}

/// What the caller must do after feeding an input to a [`Router`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RouterOutput {
    /// Emit a TC immediately.
    pub flood: Option<FloodReason>,
    /// Link ids whose neighbor entry was removed.
    pub lost: Vec<LinkId>,
    /// Link ids newly suppressed.
    pub suppressed: Vec<(LinkId, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RouteChange {
    pub dest: NodeId,
    pub old_path: Option<Vec<NodeId>>,
    pub new_path: Option<Vec<NodeId>>,
}

/// Routing state of one node.
#[derive(Debug, Clone)]
pub struct Router {
    pub id: NodeId,
    pub is_gateway: bool,
    params: RoutingParams,
    metric: Metric,
    elp: ElpParams<f64>,
    hello_seq: u32,
    tc_seq: u32,
    hna_seq: u32,
    neighbors: BTreeMap<LinkId, Neighbor>,
    suppression: SuppressionList,
    db: LinkStateDb<f64>,
    table: RoutingTable<f64>,
    busy: BTreeMap<LinkId, f64>,
    capacities: BTreeMap<LinkId, f64>,
    dirty: bool,
}

impl Router {
    pub fn new(id: NodeId, is_gateway: bool, params: RoutingParams, metric: Metric, elp: ElpParams<f64>) -> Self {
        Self {
            id,
            is_gateway,
            params,
            metric,
            elp,
            hello_seq: 0,
            tc_seq: 0,
            hna_seq: 0,
            neighbors: BTreeMap::new(),
            suppression: BTreeMap::new(),
            db: LinkStateDb::new(),
            table: RoutingTable::new(id),
            busy: BTreeMap::new(),
            capacities: BTreeMap::new(),
            dirty: false,
        }
    }

    pub fn params(&self) -> &RoutingParams {
        &self.params
    }

    pub fn table(&self) -> &RoutingTable<f64> {
        &self.table
    }

    pub fn db(&self) -> &LinkStateDb<f64> {
        &self.db
    }

    pub fn neighbors(&self) -> &BTreeMap<LinkId, Neighbor> {
        &self.neighbors
    }

    pub fn suppression(&self) -> &SuppressionList {
        &self.suppression
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    pub fn mark_dirty(&mut self) {
        self.dirty = true;
    }

    /// Registers capacity for a local link (needed before its first HELLO).
    pub fn add_local_link(&mut self, link: LinkId, capacity: f64) {
        self.capacities.insert(link, capacity);
    }

    /// Latest measured busy fraction of a local link's contention domain.
    pub fn set_busy(&mut self, link: LinkId, busy: f64) {
        self.busy.insert(link, busy);
    }

    pub fn is_suppressed(&self, link: LinkId, now: f64) -> bool {
        self.suppression.get(&link).is_some_and(|s| s.suppressed_until > now)
    }

    pub fn emit_hello(&mut self, channel: Channel) -> Hello {
        self.hello_seq += 1;
        Hello {
            sender: self.id,
            channel,
            seq: self.hello_seq,
            heard: self
                .neighbors
                .values()
                .filter(|n| n.channel == channel)
                .map(|n| HeardNeighbor {
                    node: n.node,
                    link: n.link,
                    ratio: n.stats.d_r,
                })
                .collect(),
        }
    }

    fn long_term(&mut self, link: LinkId) -> &mut SuppressionEntry {
        self.suppression.entry(link).or_insert_with(SuppressionEntry::new)
    }

    /// Neighbor sensing and probe accounting for a HELLO received on `link`.
    pub fn process_hello(&mut self, hello: &Hello, link: LinkId, now: f64) -> RouterOutput {
        let alpha = self.elp.ewma_alpha;
        let beta = self.params.long_term_alpha;
        let capacity = self.capacities.get(&link).copied().unwrap_or(self.elp.ref_rate);
        let me = self.id;
        let nb = self.neighbors.entry(link).or_insert_with(|| Neighbor {
            node: hello.sender,
            link,
            channel: hello.channel,
            last_heard: now,
            last_seq: hello.seq.saturating_sub(1),
            symmetric: false,
            stats: LinkStats::new(capacity),
        });
        let missed = hello.seq.saturating_sub(nb.last_seq + 1).min(50);
        let mut outcomes: Vec<f64> = Vec::with_capacity(missed as usize + 1);
        if hello.seq > nb.last_seq {
            for _ in 0..missed {
                record_probe(&mut nb.stats, ProbeDirection::Reverse, false, alpha);
                outcomes.push(0.0);
            }
            record_probe(&mut nb.stats, ProbeDirection::Reverse, true, alpha);
            outcomes.push(1.0);
            nb.last_seq = hello.seq;
        }
        nb.last_heard = now;
        let was_symmetric = nb.symmetric;
        match hello.heard.iter().find(|h| h.node == me && h.link == link) {
            Some(h) => {
                nb.stats.d_f = h.ratio;
                nb.stats.samples[0] += 1;
                nb.symmetric = true;
            }
            None => nb.symmetric = false,
        }
        let d_f = nb.stats.d_f;
        let entry = self.long_term(link);
        for o in outcomes {
            entry.long_term_score = (1.0 - beta) * entry.long_term_score + beta * o.min(d_f);
        }
        let mut out = RouterOutput::default();
        if was_symmetric != self.neighbors[&link].symmetric {
            self.dirty = true;
            if was_symmetric {
                out.flood = Some(FloodReason::NeighborLoss);
            }
        }
        out
    }

    /// Expires neighbors silent for longer than the hold time.
    ///
    /// With the maintainer enabled, a historically good link is held as is
    /// and only dropped if it stays silent past the suppression period.
    /// Rerouting around it is left to transmission failures.
    pub fn expire_neighbors(&mut self, now: f64) -> RouterOutput {
        let hold = self.params.neighbor_hold();
        let silent: Vec<LinkId> = self
            .neighbors
            .values()
            .filter(|n| n.last_heard + hold < now)
            .map(|n| n.link)
            .collect();
        let mut out = RouterOutput::default();
        for link in silent {
            if self.params.maintenance == MaintenanceMode::Maintainer {
                let theta = self.params.theta;
                let dur = self.params.suppress_dur;
                let last_heard = self.neighbors[&link].last_heard;
                if self.long_term(link).long_term_score >= theta && now <= last_heard + hold + dur {
                    continue;
                }
            }
            let sym = self.neighbors.remove(&link).is_some_and(|n| n.symmetric);
            out.lost.push(link);
            if sym {
                out.flood = Some(FloodReason::NeighborLoss);
            }
            self.dirty = true;
        }
        out
    }

    /// Reacts to the link layer's failure notification for `link`.
    pub fn handle_tx_failure(&mut self, link: LinkId, now: f64) -> (MaintenanceAction, RouterOutput) {
        let mode = self.params.maintenance;
        let in_use = self.table.routes.values().any(|r| r.next_link == link);
        let theta = self.params.theta;
        let window = self.params.strike_window;
        let dur = self.params.suppress_dur;
        let max_strikes = self.params.max_strikes;
        let entry = self.long_term(link);
        entry.recent_failures += 1;
        let mut out = RouterOutput::default();
        if mode == MaintenanceMode::Off || !in_use {
            return (MaintenanceAction::Bookkeeping, out);
        }
        if mode == MaintenanceMode::Maintainer {
            if entry.suppressed_until > now {
                // Already avoided; frames queued before the suppression drain here.
                return (MaintenanceAction::Bookkeeping, out);
            }
            while entry.strikes.front().is_some_and(|&t| t + window < now) {
                entry.strikes.pop_front();
            }
            if entry.long_term_score >= theta && (entry.strikes.len() as u32) < max_strikes.saturating_sub(1) {
                entry.strikes.push_back(now);
                entry.suppressed_until = now + dur;
                self.dirty = true;
                out.suppressed.push((link, now + dur));
                return (MaintenanceAction::Suppress { until: now + dur }, out);
            }
        }
        self.declare_down(link);
        out.flood = Some(FloodReason::LinkDown);
        out.lost.push(link);
        (MaintenanceAction::Down, out)
    }

    fn declare_down(&mut self, link: LinkId) {
        self.neighbors.remove(&link);
        self.db.remove_link(self.id, link);
        if let Some(e) = self.suppression.get_mut(&link) {
            e.suppressed_until = f64::NEG_INFINITY;
            e.strikes.clear();
        }
        self.dirty = true;
    }

    /// Local link costs under the configured metric.
    fn local_links(&self) -> Vec<AdvertisedLink<f64>> {
        self.neighbors
            .values()
            .filter(|n| n.symmetric)
            .filter_map(|n| {
                let mut stats = n.stats;
                stats.busy = self.busy.get(&n.link).copied().unwrap_or(0.0);
                self.metric.link_cost(&stats, &self.elp).map(|cost| AdvertisedLink {
                    to: n.node,
                    link: n.link,
                    cost,
                })
            })
            .collect()
    }

    pub fn emit_tc(&mut self) -> Tc<f64> {
        self.tc_seq += 1;
        Tc {
            originator: self.id,
            seq: self.tc_seq,
            links: self.local_links(),
        }
    }

    pub fn process_tc(&mut self, tc: &Tc<f64>, now: f64) -> FloodVerdict {
        if tc.originator == self.id {
            return FloodVerdict::Duplicate;
        }
        let v = self.db.apply_tc(tc, now + self.params.topology_hold());
        if v == FloodVerdict::Fresh {
            self.dirty = true;
        }
        v
    }

    pub fn emit_hna(&mut self) -> Option<Hna> {
        self.is_gateway.then(|| {
            self.hna_seq += 1;
            Hna {
                originator: self.id,
                seq: self.hna_seq,
            }
        })
    }

    pub fn process_hna(&mut self, hna: &Hna, now: f64) -> FloodVerdict {
        if hna.originator == self.id {
            return FloodVerdict::Duplicate;
        }
        self.db.apply_hna(hna, now + self.params.topology_hold())
    }

    /// Least-cost route to any announced gateway; ties go to the lowest id.
    pub fn resolve_gateway(&self, now: f64) -> Result<RouteEntry<f64>, RoutingError> {
        if self.is_gateway {
            return Ok(RouteEntry {
                dest: self.id,
                next_hop: self.id,
                next_link: LinkId(u32::MAX),
                path_cost: 0.0,
                path: vec![self.id],
                links: Vec::new(),
                installed_at: now,
            });
        }
        self.db
            .gateways(now)
            .filter_map(|g| self.table.get(g))
            .min_by(|a, b| {
                a.path_cost
                    .partial_cmp(&b.path_cost)
                    .unwrap_or(Ordering::Equal)
                    .then(a.dest.cmp(&b.dest))
            })
            .cloned()
            .ok_or(RoutingError::NoGateway)
    }

    /// Recomputes the table and applies hysteresis per destination.
    pub fn recompute(&mut self, now: f64) -> Vec<RouteChange> {
        self.dirty = false;
        self.db.purge(now);
        let local = self.local_links();
        self.db.set_local(self.id, local);
        let me = self.id;
        let suppressed: BTreeSet<LinkId> = self
            .suppression
            .iter()
            .filter(|(_, s)| s.suppressed_until > now)
            .map(|(l, _)| *l)
            .collect();
        let skip = |from: NodeId, link: LinkId| from == me && suppressed.contains(&link);
        let mut candidate = compute_routes_excluding(&self.db, self.metric, me, skip);
        if !suppressed.is_empty() {
            // Suppression only steers traffic onto alternatives; destinations
            // with none keep using the suppressed link.
            let full = compute_routes_excluding(&self.db, self.metric, me, |_, _| false);
            for (dest, r) in full.routes {
                candidate.routes.entry(dest).or_insert(r);
            }
        }
        let h = self.params.hysteresis;
        let mut next = BTreeMap::new();
        let mut changes = Vec::new();
        for (dest, mut cand) in candidate.routes {
            let incumbent = self.table.routes.get(&dest).and_then(|old| {
                revalue_path(&self.db, self.metric, &old.path, &old.links, skip).map(|cost| RouteEntry {
                    path_cost: cost,
                    ..old.clone()
                })
            });
            let chosen = match maybe_switch_route(incumbent.as_ref(), &cand, h) {
                SwitchDecision::Keep => incumbent.expect("keep implies incumbent"),
                SwitchDecision::Switch => {
                    let old_path = self.table.routes.get(&dest).map(|o| o.path.clone());
                    if old_path.as_ref() != Some(&cand.path) {
                        changes.push(RouteChange {
                            dest,
                            old_path,
                            new_path: Some(cand.path.clone()),
                        });
                        cand.installed_at = now;
                    } else {
                        cand.installed_at = self.table.routes[&dest].installed_at;
                    }
                    cand
                }
            };
            next.insert(dest, chosen);
        }
        for (dest, old) in &self.table.routes {
            if !next.contains_key(dest) {
                changes.push(RouteChange {
                    dest: *dest,
                    old_path: Some(old.path.clone()),
                    new_path: None,
                });
            }
        }
        self.table.routes = next;
        debug_assert!(self.table.is_loop_free());
        changes
    }
}
