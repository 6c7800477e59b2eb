//! Physical network: node placement, radios, channels and the links and
//! carrier-sense sets derived from them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub u32);

impl LinkId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

pub type Channel = u16;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("invalid topology: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("unknown link {0}")]
    UnknownLink(LinkId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RadioRole {
    #[default]
    Backbone,
    Access,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioSpec {
    pub channel: Channel,
    /// Bits per second.
    pub nominal_rate: f64,
    /// Meters.
    pub tx_range: f64,
    /// Carrier-sense range in meters, at least `tx_range`.
    pub cs_range: f64,
    #[serde(default)]
    pub role: RadioRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    /// Meters, 2D.
    pub position: [f64; 2],
    pub radios: Vec<RadioSpec>,
    #[serde(default)]
    pub is_server: bool,
}

/// Piecewise-linear loss-vs-distance curve: flat at `p_max` up to
/// `flat_fraction * R`, then linear down to `p_min` at `R`, zero beyond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Propagation {
    pub p_max: f64,
    pub p_min: f64,
    pub flat_fraction: f64,
}

impl Default for Propagation {
    fn default() -> Self {
        Self {
            p_max: 0.98,
            p_min: 0.5,
            flat_fraction: 0.6,
        }
    }
}

impl Propagation {
    pub fn delivery_probability(&self, distance: f64, range: f64) -> f64 {
        if distance > range {
            return 0.0;
        }
        let knee = self.flat_fraction * range;
        if distance <= knee {
            return self.p_max;
        }
        let frac = (distance - knee) / (range - knee);
        self.p_max - (self.p_max - self.p_min) * frac
    }
}

/// Removes every link between `a` and `b` (optionally only on one channel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkRemoval {
    pub a: NodeId,
    pub b: NodeId,
    #[serde(default)]
    pub channel: Option<Channel>,
}

/// Pins the delivery probability of the `src -> dst` direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbabilityOverride {
    pub src: NodeId,
    pub dst: NodeId,
    #[serde(default)]
    pub channel: Option<Channel>,
    pub p: f64,
}

/// The topology section of a scenario.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    #[serde(default)]
    pub propagation: Propagation,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub remove_links: Vec<LinkRemoval>,
    #[serde(default)]
    pub overrides: Vec<ProbabilityOverride>,
}

/// Undirected link between `a < b` on one channel, carrying both directions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Link {
    pub id: LinkId,
    pub a: NodeId,
    pub b: NodeId,
    pub channel: Channel,
    pub distance: f64,
    /// Per-attempt delivery probability `a -> b`.
    pub p_ab: f64,
    /// Per-attempt delivery probability `b -> a`.
    pub p_ba: f64,
    pub capacity: f64,
}

impl Link {
    pub fn connects(&self, x: NodeId, y: NodeId) -> bool {
        (self.a == x && self.b == y) || (self.a == y && self.b == x)
    }

    pub fn other(&self, node: NodeId) -> Option<NodeId> {
        if node == self.a {
            Some(self.b)
        } else if node == self.b {
            Some(self.a)
        } else {
            None
        }
    }

    pub fn p_from(&self, sender: NodeId) -> f64 {
        if sender == self.a {
            self.p_ab
        } else {
            self.p_ba
        }
    }

    pub fn has_endpoint(&self, node: NodeId) -> bool {
        self.a == node || self.b == node
    }
}

/// A link used in one direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DirLink {
    pub link: LinkId,
    pub from: NodeId,
    pub to: NodeId,
}

#[derive(Debug, Clone)]
pub struct Topology {
    nodes: Vec<NodeSpec>,
    index: BTreeMap<NodeId, usize>,
    links: Vec<Link>,
    adjacency: BTreeMap<NodeId, Vec<LinkId>>,
    domains: Vec<Vec<LinkId>>,
    propagation: Propagation,
}

fn dist(p: [f64; 2], q: [f64; 2]) -> f64 {
    (p[0] - q[0]).hypot(p[1] - q[1])
}

fn validate(spec: &TopologySpec) -> Vec<String> {
    let mut errors = Vec::new();
    let mut seen = BTreeSet::new();
    let prop = &spec.propagation;
    if !(0.0..=1.0).contains(&prop.p_max) || !(0.0..=1.0).contains(&prop.p_min) {
        errors.push("propagation: p_max and p_min must lie in [0, 1]".to_string());
    }
    if prop.p_min > prop.p_max {
        errors.push("propagation: p_min exceeds p_max".to_string());
    }
    if !(0.0..1.0).contains(&prop.flat_fraction) {
        errors.push("propagation: flat_fraction must lie in [0, 1)".to_string());
    }
    for node in &spec.nodes {
        if !seen.insert(node.id) {
            errors.push(format!("node {}: duplicate id", node.id));
        }
        if node.radios.is_empty() {
            errors.push(format!("node {}: no radios", node.id));
        }
        if !node.position.iter().all(|c| c.is_finite()) {
            errors.push(format!("node {}: non-finite position", node.id));
        }
        let mut channels = BTreeSet::new();
        for (i, r) in node.radios.iter().enumerate() {
            if !channels.insert(r.channel) {
                errors.push(format!("node {} radio {i}: channel {} used twice", node.id, r.channel));
            }
            if !(r.tx_range > 0.0 && r.tx_range.is_finite()) {
                errors.push(format!("node {} radio {i}: tx_range must be positive", node.id));
            }
            if !(r.cs_range >= r.tx_range) {
                errors.push(format!("node {} radio {i}: cs_range below tx_range", node.id));
            }
            if !(r.nominal_rate > 0.0 && r.nominal_rate.is_finite()) {
                errors.push(format!("node {} radio {i}: nominal_rate must be positive", node.id));
            }
        }
    }
    for r in &spec.remove_links {
        for n in [r.a, r.b] {
            if !seen.contains(&n) {
                errors.push(format!("remove_links: unknown node {n}"));
            }
        }
    }
    for o in &spec.overrides {
        for n in [o.src, o.dst] {
            if !seen.contains(&n) {
                errors.push(format!("overrides: unknown node {n}"));
            }
        }
        if !(0.0..=1.0).contains(&o.p) {
            errors.push(format!("overrides {}->{}: p must lie in [0, 1]", o.src, o.dst));
        }
    }
    errors
}

/// Builds the link set, delivery probabilities and contention domains.
pub fn build_topology(spec: &TopologySpec) -> Result<Topology, TopologyError> {
    let errors = validate(spec);
    if !errors.is_empty() {
        return Err(TopologyError::Validation(errors));
    }
    let mut nodes = spec.nodes.clone();
    nodes.sort_by_key(|n| n.id);
    let index: BTreeMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();

    let removed = |a: NodeId, b: NodeId, ch: Channel| {
        spec.remove_links.iter().any(|r| {
            ((r.a == a && r.b == b) || (r.a == b && r.b == a)) && r.channel.map_or(true, |c| c == ch)
        })
    };
    let overridden = |src: NodeId, dst: NodeId, ch: Channel| {
        spec.overrides
            .iter()
            .rev()
            .find(|o| o.src == src && o.dst == dst && o.channel.map_or(true, |c| c == ch))
            .map(|o| o.p)
    };

    let mut links = Vec::new();
    for (i, na) in nodes.iter().enumerate() {
        for nb in &nodes[i + 1..] {
            let d = dist(na.position, nb.position);
            for ra in na.radios.iter().filter(|r| r.role == RadioRole::Backbone) {
                let Some(rb) = nb
                    .radios
                    .iter()
                    .find(|r| r.role == RadioRole::Backbone && r.channel == ra.channel)
                else {
                    continue;
                };
                let range = ra.tx_range.min(rb.tx_range);
                if d > range || removed(na.id, nb.id, ra.channel) {
                    continue;
                }
                let p = spec.propagation.delivery_probability(d, range);
                links.push(Link {
                    id: LinkId(0),
                    a: na.id,
                    b: nb.id,
                    channel: ra.channel,
                    distance: d,
                    p_ab: overridden(na.id, nb.id, ra.channel).unwrap_or(p),
                    p_ba: overridden(nb.id, na.id, ra.channel).unwrap_or(p),
                    capacity: ra.nominal_rate.min(rb.nominal_rate),
                });
            }
        }
    }
    links.sort_by(|x, y| (x.a, x.b, x.channel).cmp(&(y.a, y.b, y.channel)));
    for (i, l) in links.iter_mut().enumerate() {
        l.id = LinkId(i as u32);
    }

    let mut adjacency: BTreeMap<NodeId, Vec<LinkId>> = nodes.iter().map(|n| (n.id, Vec::new())).collect();
    for l in &links {
        adjacency.get_mut(&l.a).expect("endpoint").push(l.id);
        adjacency.get_mut(&l.b).expect("endpoint").push(l.id);
    }

    let mut topo = Topology {
        nodes,
        index,
        links,
        adjacency,
        domains: Vec::new(),
        propagation: spec.propagation,
    };
    topo.domains = (0..topo.links.len())
        .map(|i| topo.compute_domain(&topo.links[i]))
        .collect();
    Ok(topo)
}

impl Topology {
    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeSpec> {
        self.index.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().map(|n| n.id)
    }

    pub fn servers(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().filter(|n| n.is_server).map(|n| n.id)
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> Result<&Link, TopologyError> {
        self.links.get(id.index()).ok_or(TopologyError::UnknownLink(id))
    }

    pub fn propagation(&self) -> &Propagation {
        &self.propagation
    }

    /// Links incident to `node`, in id order.
    pub fn incident(&self, node: NodeId) -> &[LinkId] {
        self.adjacency.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn links_between(&self, x: NodeId, y: NodeId) -> impl Iterator<Item = &Link> + '_ {
        self.incident(x)
            .iter()
            .map(|l| &self.links[l.index()])
            .filter(move |l| l.connects(x, y))
    }

    pub fn directed(&self, link: LinkId, from: NodeId) -> Result<DirLink, TopologyError> {
        let l = self.link(link)?;
        let to = l.other(from).ok_or(TopologyError::UnknownNode(from))?;
        Ok(DirLink { link, from, to })
    }

    pub fn radio(&self, node: NodeId, channel: Channel) -> Option<&RadioSpec> {
        self.node(node)?.radios.iter().find(|r| r.channel == channel)
    }

    /// Links sharing airtime with `link`: same channel, with an endpoint
    /// inside the carrier-sense range of either endpoint of `link`.
    pub fn contention_domain(&self, link: LinkId) -> Result<&[LinkId], TopologyError> {
        self.domains
            .get(link.index())
            .map(Vec::as_slice)
            .ok_or(TopologyError::UnknownLink(link))
    }

    fn position(&self, id: NodeId) -> [f64; 2] {
        self.nodes[self.index[&id]].position
    }

    fn compute_domain(&self, link: &Link) -> Vec<LinkId> {
        let sensors: Vec<([f64; 2], f64)> = [link.a, link.b]
            .iter()
            .map(|&n| {
                let cs = self.radio(n, link.channel).map_or(0.0, |r| r.cs_range);
                (self.position(n), cs)
            })
            .collect();
        self.links
            .iter()
            .filter(|other| other.channel == link.channel)
            .filter(|other| {
                other.id == link.id
                    || [other.a, other.b].iter().any(|&tx| {
                        let p = self.position(tx);
                        sensors.iter().any(|&(s, cs)| dist(p, s) <= cs)
                    })
            })
            .map(|l| l.id)
            .collect()
    }
}
