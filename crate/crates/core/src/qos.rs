//! Airtime-based bandwidth estimation and admission control for CBR flows.
//!
//! Each link `e` owns a contention domain `D(e)`. A flow crossing link `l`
//! consumes `demand / (capacity(l) * goodput)` of airtime in every domain that
//! contains `l`, once per traversing link, so a k-hop flow whose links share
//! one domain is charged k times there.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{sum_in_order, Scalar};
use crate::topology::{LinkId, NodeId, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlowId(pub u64);

impl std::fmt::Display for FlowId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QosError {
    #[error("flow has no route")]
    NoRoute,
    #[error("unknown flow {0}")]
    UnknownFlow(FlowId),
    #[error("flow {0} already holds a reservation")]
    DuplicateFlow(FlowId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    Voice,
    Video,
    Background,
    Broadcast,
}

impl FlowKind {
    /// Background and broadcast traffic bypasses admission.
    pub fn admission_exempt(self) -> bool {
        matches!(self, FlowKind::Background | FlowKind::Broadcast)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FlowKind::Voice => "voice",
            FlowKind::Video => "video",
            FlowKind::Background => "background",
            FlowKind::Broadcast => "broadcast",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub id: FlowId,
    pub src: NodeId,
    pub dst: NodeId,
    /// Bits per second.
    pub demand: f64,
    /// Bits.
    pub packet_size: f64,
    pub kind: FlowKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QosParams {
    pub enabled: bool,
    pub u_max: f64,
    pub goodput_factor: f64,
}

impl Default for QosParams {
    fn default() -> Self {
        Self {
            enabled: true,
            u_max: 0.85,
            goodput_factor: 0.8,
        }
    }
}

impl QosParams {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.u_max > 0.0 && self.u_max <= 1.0) {
            errs.push("qos.u_max must lie in (0, 1]".into());
        }
        if !(self.goodput_factor > 0.0 && self.goodput_factor <= 1.0) {
            errs.push("qos.goodput_factor must lie in (0, 1]".into());
        }
        errs
    }
}

/// Fraction of channel time a flow needs on one link.
pub fn flow_airtime<T: Scalar>(demand: T, capacity: T, goodput_factor: T) -> T {
    demand / (capacity * goodput_factor)
}

/// Residual airtime of a domain: `u_max - max(model, measured)`, never negative.
pub fn residual<T: Scalar>(committed: T, measured_busy: T, u_max: T) -> T {
    (u_max - committed.max_of(measured_busy)).max_of(T::zero())
}

/// Domain membership in both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentionMap {
    /// `members[e]` = links in `D(e)`.
    members: Vec<Vec<LinkId>>,
    /// `containing[l]` = domains `e` with `l` in `D(e)`.
    containing: Vec<Vec<LinkId>>,
}

impl ContentionMap {
    pub fn from_topology(topology: &Topology) -> Self {
        let members: Vec<Vec<LinkId>> = topology
            .links()
            .iter()
            .map(|l| topology.contention_domain(l.id).expect("link exists").to_vec())
            .collect();
        Self::from_members(members)
    }

    pub fn from_members(members: Vec<Vec<LinkId>>) -> Self {
        let mut containing = vec![Vec::new(); members.len()];
        for (e, m) in members.iter().enumerate() {
            for l in m {
                containing[l.index()].push(LinkId(e as u32));
            }
        }
        Self { members, containing }
    }

    pub fn domain(&self, e: LinkId) -> &[LinkId] {
        &self.members[e.index()]
    }

    pub fn domains_containing(&self, l: LinkId) -> &[LinkId] {
        &self.containing[l.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reservation<T> {
    pub flow: FlowId,
    pub path: Vec<LinkId>,
    /// Link airtime shares along the path.
    pub link_shares: Vec<T>,
    /// Increment per domain key.
    pub increments: BTreeMap<LinkId, T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Admission<T> {
    Admit(Reservation<T>),
    Reject { bottleneck: LinkId },
}

impl<T> Admission<T> {
    pub fn is_admit(&self) -> bool {
        matches!(self, Admission::Admit(_))
    }
}

/// Committed airtime per domain plus the reservations behind it.
///
/// `committed` is always recomputed from the live reservations in flow-id
/// order, so releasing a flow restores the exact prior values.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissionLedger<T> {
    u_max: T,
    goodput: T,
    committed: BTreeMap<LinkId, T>,
    flows: BTreeMap<FlowId, Reservation<T>>,
}

impl<T: Scalar> AdmissionLedger<T> {
    pub fn new(u_max: T, goodput_factor: T) -> Self {
        Self {
            u_max,
            goodput: goodput_factor,
            committed: BTreeMap::new(),
            flows: BTreeMap::new(),
        }
    }

    pub fn committed(&self, domain: LinkId) -> T {
        self.committed.get(&domain).copied().unwrap_or_else(T::zero)
    }

    pub fn committed_domains(&self) -> &BTreeMap<LinkId, T> {
        &self.committed
    }

    pub fn reservation(&self, flow: FlowId) -> Option<&Reservation<T>> {
        self.flows.get(&flow)
    }

    pub fn flows(&self) -> impl Iterator<Item = &Reservation<T>> {
        self.flows.values()
    }

    pub fn residual(&self, domain: LinkId, measured_busy: T) -> T {
        residual(self.committed(domain), measured_busy, self.u_max)
    }

    fn recompute(&self, domain: LinkId, extra: Option<&Reservation<T>>) -> Option<T> {
        let mut parts: Vec<(FlowId, T)> = self
            .flows
            .values()
            .filter_map(|r| r.increments.get(&domain).map(|v| (r.flow, *v)))
            .collect();
        if let Some(r) = extra {
            if let Some(v) = r.increments.get(&domain) {
                parts.push((r.flow, *v));
            }
        }
        parts.sort_by_key(|p| p.0);
        (!parts.is_empty()).then(|| sum_in_order(parts.into_iter().map(|p| p.1)))
    }

    /// Admission test over every domain the flow touches. `path` pairs each
    /// link with its capacity; `measured` gives each domain's busy fraction.
    pub fn admit(
        &mut self,
        flow: FlowId,
        demand: T,
        path: &[(LinkId, T)],
        map: &ContentionMap,
        measured: impl Fn(LinkId) -> T,
    ) -> Result<Admission<T>, QosError> {
        if path.is_empty() {
            return Err(QosError::NoRoute);
        }
        if self.flows.contains_key(&flow) {
            return Err(QosError::DuplicateFlow(flow));
        }
        let link_shares: Vec<T> = path
            .iter()
            .map(|&(_, cap)| flow_airtime(demand, cap, self.goodput))
            .collect();
        let mut increments: BTreeMap<LinkId, T> = BTreeMap::new();
        for (&(link, _), &share) in path.iter().zip(&link_shares) {
            for &d in map.domains_containing(link) {
                let v = increments.entry(d).or_insert_with(T::zero);
                *v = *v + share;
            }
        }
        let res = Reservation {
            flow,
            path: path.iter().map(|p| p.0).collect(),
            link_shares,
            increments,
        };
        let mut updated = Vec::new();
        for &d in res.increments.keys() {
            let total = self.recompute(d, Some(&res)).expect("domain has the new flow");
            let with_measured = (total - res.increments[&d]).max_of(measured(d)) + res.increments[&d];
            if total > self.u_max || with_measured > self.u_max {
                return Ok(Admission::Reject { bottleneck: d });
            }
            updated.push((d, total));
        }
        self.committed.extend(updated);
        self.flows.insert(flow, res.clone());
        Ok(Admission::Admit(res))
    }

    /// Removes a flow's reservation and recomputes the domains it touched.
    pub fn release(&mut self, flow: FlowId) -> Result<Reservation<T>, QosError> {
        let res = self.flows.remove(&flow).ok_or(QosError::UnknownFlow(flow))?;
        for &d in res.increments.keys() {
            match self.recompute(d, None) {
                Some(v) => {
                    self.committed.insert(d, v);
                }
                None => {
                    self.committed.remove(&d);
                }
            }
        }
        Ok(res)
    }

    /// `committed` equals the in-order sum of live increments everywhere.
    pub fn is_conserved(&self) -> bool {
        let mut keys: Vec<LinkId> = self.committed.keys().copied().collect();
        for r in self.flows.values() {
            keys.extend(r.increments.keys());
        }
        keys.sort();
        keys.dedup();
        keys.into_iter().all(|d| self.recompute(d, None) == self.committed.get(&d).copied())
    }

    pub fn within_limit(&self) -> bool {
        self.committed.values().all(|v| *v <= self.u_max)
    }
}
