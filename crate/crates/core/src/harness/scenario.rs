//! Scenario files: TOML with `run`, `topology`, `protocol` and `workload`
//! sections. Unknown keys are rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::MacParams;
use crate::metrics::{ElpParams, Metric};
use crate::qos::{FlowKind, QosParams};
use crate::routing::RoutingParams;
use crate::services::{AuthMode, ClientId, Credentials, ServiceParams, VideoPolicy};
use crate::topology::{build_topology, Channel, NodeId, RadioRole, Topology, TopologyError, TopologySpec};

use super::ScenarioError;

/// Names accepted by [`Scenario::preset`].
pub const PRESETS: &[&str] = &["indoor22", "outdoor7"];

const INDOOR22: &str = include_str!("../../scenarios/indoor22.toml");
const OUTDOOR7: &str = include_str!("../../scenarios/outdoor7.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub run: RunSection,
    pub topology: TopologySpec,
    #[serde(default)]
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub workload: Workload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Simulated seconds of traffic generation.
    pub duration: f64,
    #[serde(default = "default_warmup")]
    pub warmup: f64,
    /// Extra time after `duration` for in-flight packets to land.
    #[serde(default = "default_drain")]
    pub drain: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_warmup() -> f64 {
    15.0
}

fn default_drain() -> f64 {
    2.0
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    pub metric: Metric,
    pub elp: ElpParams<f64>,
    pub routing: RoutingParams,
    pub mac: MacParams,
    pub qos: QosParams,
    pub services: ServiceParams,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Workload {
    pub mode: AuthMode,
    /// Server user table, username to password.
    pub users: BTreeMap<String, String>,
    pub clients: Vec<ClientSpec>,
    pub attachments: Vec<AttachSpec>,
    pub actions: Vec<Action>,
    pub generator: Option<Generator>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    pub id: ClientId,
    /// Initial access node; absent means out of range.
    #[serde(default)]
    pub node: Option<NodeId>,
    #[serde(default)]
    pub credentials: Option<Credentials>,
    #[serde(default)]
    pub video: VideoPolicy,
    #[serde(default)]
    pub position: [f64; 2],
    #[serde(default)]
    pub register_at: f64,
}

/// Re-attachment of a client to another access node, or detachment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttachSpec {
    pub at: f64,
    pub client: ClientId,
    #[serde(default)]
    pub node: Option<NodeId>,
}

fn default_call_duration() -> f64 {
    60.0
}

fn default_video_duration() -> f64 {
    30.0
}

fn default_flow_kind() -> FlowKind {
    FlowKind::Voice
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    Sms {
        at: f64,
        src: ClientId,
        dst: ClientId,
    },
    File {
        at: f64,
        src: ClientId,
        dst: ClientId,
        /// Bytes.
        size: f64,
        #[serde(default)]
        chunk: Option<f64>,
    },
    Call {
        at: f64,
        src: ClientId,
        dst: ClientId,
        #[serde(default = "default_call_duration")]
        duration: f64,
    },
    Broadcast {
        at: f64,
        duration: f64,
    },
    Video {
        at: f64,
        src: ClientId,
        dst: ClientId,
        #[serde(default = "default_video_duration")]
        duration: f64,
    },
    /// Raw CBR stream between two nodes.
    Flow {
        at: f64,
        src: NodeId,
        dst: NodeId,
        /// Payload bits/s.
        rate: f64,
        packet_bytes: f64,
        duration: f64,
        #[serde(default = "default_flow_kind")]
        kind: FlowKind,
    },
    /// Total loss on one link for `duration` seconds.
    Outage {
        at: f64,
        a: NodeId,
        b: NodeId,
        #[serde(default)]
        channel: Option<Channel>,
        duration: f64,
    },
}

impl Action {
    pub fn at(&self) -> f64 {
        match *self {
            Action::Sms { at, .. }
            | Action::File { at, .. }
            | Action::Call { at, .. }
            | Action::Broadcast { at, .. }
            | Action::Video { at, .. }
            | Action::Flow { at, .. }
            | Action::Outage { at, .. } => at,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Action::Sms { .. } => "sms",
            Action::File { .. } => "file",
            Action::Call { .. } => "call",
            Action::Broadcast { .. } => "broadcast",
            Action::Video { .. } => "video",
            Action::Flow { .. } => "flow",
            Action::Outage { .. } => "outage",
        }
    }
}

/// Random call workload used by sweeps: `calls` admission-controlled voice
/// calls plus `background` admission-exempt calls between random node pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Generator {
    pub calls: u32,
    pub background: u32,
    /// First call start; defaults to the end of warmup.
    pub start: Option<f64>,
    /// Calls start uniformly within `[start, start + stagger]`.
    pub stagger: f64,
    pub duration: f64,
}

impl Default for Generator {
    fn default() -> Self {
        Self {
            calls: 0,
            background: 0,
            start: None,
            stagger: 5.0,
            duration: 60.0,
        }
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ScenarioError> {
        let sc: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn preset(name: &str) -> Option<Self> {
        let text = match name {
            "indoor22" => INDOOR22,
            "outdoor7" => OUTDOOR7,
            _ => return None,
        };
        Some(Self::from_toml_str(text, name).expect("bundled preset is valid"))
    }

    /// A preset name or a path to a scenario file.
    pub fn resolve(arg: &str) -> Result<Self, ScenarioError> {
        if !Path::new(arg).exists() {
            if let Some(sc) = Self::preset(arg) {
                return Ok(sc);
            }
        }
        load_scenario(arg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Copy with the generator set to one sweep cell.
    pub fn with_cell(&self, calls: u32, background: u32) -> Self {
        let mut sc = self.clone();
        let g = sc.workload.generator.get_or_insert_with(Generator::default);
        g.calls = calls;
        g.background = background;
        sc
    }

    pub fn cell(&self) -> (u32, u32) {
        self.workload
            .generator
            .as_ref()
            .map_or((0, 0), |g| (g.calls, g.background))
    }

    pub fn build_topology(&self) -> Result<Topology, ScenarioError> {
        build_topology(&self.topology).map_err(|e| match e {
            TopologyError::Validation(errs) => {
                ScenarioError::Validation(errs.into_iter().map(|m| format!("topology: {m}")).collect())
            }
            other => ScenarioError::Validation(vec![format!("topology: {other}")]),
        })
    }

    /// Checks every cross-reference and parameter range.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut errs = Vec::new();
        let run = &self.run;
        if !(run.warmup >= 0.0 && run.warmup.is_finite()) {
            errs.push("run.warmup must be non-negative".to_string());
        }
        if !(run.duration > run.warmup && run.duration.is_finite()) {
            errs.push(format!("run.duration ({}) must exceed run.warmup ({})", run.duration, run.warmup));
        }
        if !(run.drain >= 0.0 && run.drain.is_finite()) {
            errs.push("run.drain must be non-negative".to_string());
        }
        if run.seeds.is_empty() {
            errs.push("run.seeds must not be empty".to_string());
        }

        let topo = match self.build_topology() {
            Ok(t) => Some(t),
            Err(ScenarioError::Validation(e)) => {
                errs.extend(e);
                None
            }
            Err(e) => return Err(e),
        };

        let p = &self.protocol;
        errs.extend(p.elp.validate().into_iter().map(|m| format!("protocol.{m}")));
        errs.extend(p.routing.validate().into_iter().map(|m| format!("protocol.{m}")));
        errs.extend(p.mac.validate().into_iter().map(|m| format!("protocol.{m}")));
        errs.extend(p.qos.validate().into_iter().map(|m| format!("protocol.{m}")));
        errs.extend(p.services.validate().into_iter().map(|m| format!("protocol.{m}")));

        let nodes: BTreeSet<NodeId> = self.topology.nodes.iter().map(|n| n.id).collect();
        let has_server = self.topology.nodes.iter().any(|n| n.is_server);
        let w = &self.workload;
        let mut clients = BTreeSet::new();
        for (i, c) in w.clients.iter().enumerate() {
            if !clients.insert(c.id) {
                errs.push(format!("workload.clients[{i}]: duplicate client id {}", c.id.0));
            }
            if let Some(n) = c.node {
                if !nodes.contains(&n) {
                    errs.push(format!("workload.clients[{i}].node: undefined node {}", n.0));
                }
            }
        }
        if !w.clients.is_empty() && !has_server {
            errs.push("workload.clients: services need a node with is_server = true".to_string());
        }
        for (i, a) in w.attachments.iter().enumerate() {
            if !clients.contains(&a.client) {
                errs.push(format!("workload.attachments[{i}].client: undefined client {}", a.client.0));
            }
            if let Some(n) = a.node {
                if !nodes.contains(&n) {
                    errs.push(format!("workload.attachments[{i}].node: undefined node {}", n.0));
                }
            }
            if !(a.at >= 0.0) {
                errs.push(format!("workload.attachments[{i}].at must be non-negative"));
            }
        }
        for (i, a) in w.actions.iter().enumerate() {
            let key = format!("workload.actions[{i}] ({})", a.name());
            if !(a.at() >= 0.0 && a.at().is_finite()) {
                errs.push(format!("{key}.at must be non-negative"));
            }
            let mut client = |field: &str, c: ClientId| {
                if !clients.contains(&c) {
                    errs.push(format!("{key}.{field}: undefined client {}", c.0));
                }
            };
            match a {
                Action::Sms { src, dst, .. } | Action::Call { src, dst, .. } | Action::Video { src, dst, .. } => {
                    client("src", *src);
                    client("dst", *dst);
                }
                Action::File { src, dst, .. } => {
                    client("src", *src);
                    client("dst", *dst);
                }
                _ => {}
            }
            match a {
                Action::File { size, chunk, .. } => {
                    if !(*size > 0.0) {
                        errs.push(format!("{key}.size must be positive"));
                    }
                    if chunk.is_some_and(|c| !(c > 0.0)) {
                        errs.push(format!("{key}.chunk must be positive"));
                    }
                }
                Action::Call { duration, .. } | Action::Video { duration, .. } | Action::Broadcast { duration, .. } => {
                    if !(*duration > 0.0) {
                        errs.push(format!("{key}.duration must be positive"));
                    }
                }
                Action::Flow {
                    src,
                    dst,
                    rate,
                    packet_bytes,
                    duration,
                    ..
                } => {
                    for (f, n) in [("src", src), ("dst", dst)] {
                        if !nodes.contains(n) {
                            errs.push(format!("{key}.{f}: undefined node {}", n.0));
                        }
                    }
                    if !(*rate > 0.0 && *packet_bytes > 0.0 && *duration > 0.0) {
                        errs.push(format!("{key}: rate, packet_bytes and duration must be positive"));
                    }
                }
                Action::Outage { a: x, b: y, channel, duration, .. } => {
                    if !(*duration > 0.0) {
                        errs.push(format!("{key}.duration must be positive"));
                    }
                    if let Some(t) = &topo {
                        let found = t
                            .links_between(*x, *y)
                            .any(|l| channel.map_or(true, |c| c == l.channel));
                        if !found {
                            errs.push(format!("{key}: no link between nodes {} and {}", x.0, y.0));
                        }
                    }
                }
                _ => {}
            }
            if matches!(a, Action::Sms { .. } | Action::File { .. } | Action::Call { .. } | Action::Broadcast { .. } | Action::Video { .. })
                && !has_server
            {
                errs.push(format!("{key}: services need a node with is_server = true"));
            }
        }
        if let Some(g) = &w.generator {
            let backbone = self
                .topology
                .nodes
                .iter()
                .filter(|n| n.radios.iter().any(|r| r.role == RadioRole::Backbone))
                .count();
            if g.calls + g.background > 0 && backbone < 2 {
                errs.push("workload.generator needs at least two backbone nodes".to_string());
            }
            if !(g.stagger >= 0.0 && g.duration > 0.0) {
                errs.push("workload.generator: stagger must be non-negative and duration positive".to_string());
            }
            if g.start.is_some_and(|s| !(s >= 0.0)) {
                errs.push("workload.generator.start must be non-negative".to_string());
            }
        }

        if errs.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Validation(errs))
        }
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Scenario::from_toml_str(&text, &path.display().to_string())
}
