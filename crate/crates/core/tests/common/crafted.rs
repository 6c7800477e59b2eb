//! Hand-built topologies: a lossy shortcut against a clean detour, and a
//! diamond with an outage on the preferred branch.

use meshsim::harness::{run_seeds, LogEvent, RunReport, Scenario};
use meshsim::topology::{LinkId, NodeId};

const SHORTCUT: &str = r#"
name = "shortcut"

[run]
duration = 85.0

[protocol]
metric = "METRIC"

[protocol.mac]
max_attempts = 1

[protocol.routing]
maintenance = "off"

[topology.propagation]
flat_fraction = 0.9

# Source 0 and destination 2 share a slow, lossy channel-11 link; relay 1
# offers a clean two-hop path on channel 1.
[[topology.nodes]]
id = 0
position = [0.0, 0.0]
radios = [
  { channel = 1, nominal_rate = 54e6, tx_range = 45.0, cs_range = 90.0 },
  { channel = 11, nominal_rate = 18e6, tx_range = 45.0, cs_range = 90.0 },
]

[[topology.nodes]]
id = 1
position = [20.0, 0.0]
radios = [{ channel = 1, nominal_rate = 54e6, tx_range = 45.0, cs_range = 90.0 }]

[[topology.nodes]]
id = 2
position = [40.0, 0.0]
radios = [
  { channel = 1, nominal_rate = 54e6, tx_range = 45.0, cs_range = 90.0 },
  { channel = 11, nominal_rate = 18e6, tx_range = 45.0, cs_range = 90.0 },
]

[[topology.remove_links]]
a = 0
b = 2
channel = 1

[[topology.overrides]]
src = 0
dst = 2
channel = 11
p = 0.5

[[topology.overrides]]
src = 2
dst = 0
channel = 11
p = 0.5

[[workload.actions]]
type = "flow"
at = 20.0
src = 0
dst = 2
rate = 64e3
packet_bytes = 160
duration = 60.0
"#;

pub fn shortcut(metric: &str) -> Scenario {
    Scenario::from_toml_str(&SHORTCUT.replace("METRIC", metric), "shortcut").unwrap()
}

/// Mean flow PDR over `seeds`.
pub fn shortcut_pdr(metric: &str, seeds: &[u64]) -> f64 {
    let report = run_seeds(&shortcut(metric), seeds).unwrap();
    report.cells[0].mean("pdr").unwrap()
}

const DIAMOND: &str = r#"
name = "diamond"

[run]
duration = 80.0

[protocol.routing]
maintenance = "MODE"

[topology.propagation]
flat_fraction = 0.9

# 0 -> 2 via the clean relay 1 or the weaker relay 3.
[[topology.nodes]]
id = 0
position = [0.0, 0.0]
radios = [{ channel = 1, nominal_rate = 54e6, tx_range = 30.0, cs_range = 90.0 }]

[[topology.nodes]]
id = 1
position = [20.0, 10.0]
radios = [{ channel = 1, nominal_rate = 54e6, tx_range = 30.0, cs_range = 90.0 }]

[[topology.nodes]]
id = 2
position = [40.0, 0.0]
radios = [{ channel = 1, nominal_rate = 54e6, tx_range = 30.0, cs_range = 90.0 }]

[[topology.nodes]]
id = 3
position = [20.0, -10.0]
radios = [{ channel = 1, nominal_rate = 54e6, tx_range = 30.0, cs_range = 90.0 }]

[[topology.remove_links]]
a = 1
b = 3

[[topology.overrides]]
src = 0
dst = 3
p = 0.8

[[topology.overrides]]
src = 3
dst = 0
p = 0.8

[[topology.overrides]]
src = 3
dst = 2
p = 0.8

[[topology.overrides]]
src = 2
dst = 3
p = 0.8

[[workload.actions]]
type = "flow"
at = 20.0
src = 0
dst = 2
rate = 64e3
packet_bytes = 160
duration = 55.0

[[workload.actions]]
type = "outage"
at = 40.0
a = 0
b = 1
duration = 5.0
"#;

pub const OUTAGE_START: f64 = 40.0;
pub const ORIGINAL: [u32; 3] = [0, 1, 2];

pub fn diamond(mode: &str) -> Scenario {
    Scenario::from_toml_str(&DIAMOND.replace("MODE", mode), "diamond").unwrap()
}

/// What the event log says about one outage run.
#[derive(Debug)]
pub struct OutageLog {
    pub outage_link: LinkId,
    /// Floods advertising the loss of the outage link.
    pub attributable_floods: usize,
    /// Route changes at the source toward the destination after the outage.
    pub reroutes: usize,
    pub final_path: Option<Vec<NodeId>>,
    pub suppressions: usize,
}

impl OutageLog {
    pub fn from_run(run: &RunReport) -> Self {
        let outage_link = run
            .events
            .iter()
            .find_map(|e| match e {
                LogEvent::Outage { link, down: true, .. } => Some(*link),
                _ => None,
            })
            .expect("outage logged");
        let mut log = Self {
            outage_link,
            attributable_floods: 0,
            reroutes: 0,
            final_path: Some(ORIGINAL.iter().map(|&n| NodeId(n)).collect()),
            suppressions: 0,
        };
        for e in &run.events {
            match e {
                LogEvent::Flood { links, .. } if links.contains(&outage_link) => log.attributable_floods += 1,
                LogEvent::Maintenance { link, action, .. } if *link == outage_link && action == "suppress" => {
                    log.suppressions += 1
                }
                LogEvent::RouteChange {
                    t, node, dest, new_path, ..
                } if *t >= OUTAGE_START && *node == NodeId(0) && *dest == NodeId(2) => {
                    log.reroutes += 1;
                    log.final_path = new_path.clone();
                }
                _ => {}
            }
        }
        log
    }

    pub fn returned_to_original(&self) -> bool {
        self.final_path.as_deref() == Some(&ORIGINAL.map(NodeId)[..])
    }
}

pub fn outage_logs(mode: &str, seeds: &[u64]) -> Vec<OutageLog> {
    run_seeds(&diamond(mode), seeds)
        .unwrap()
        .runs
        .iter()
        .map(OutageLog::from_run)
        .collect()
}
