//! Per-run and per-cell results and the statistics behind them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::engine::EngineStats;
use crate::qos::FlowKind;
use crate::services::{Phase, TransferPhase, VideoOutcome};
use crate::topology::{LinkId, NodeId};

use super::HarnessError;

/// Streaming interarrival jitter over a sequence of transit times:
/// `J += (|D| - J) / 16` with `D` the difference of consecutive transits.
pub fn compute_jitter(transits: &[f64]) -> Result<f64, HarnessError> {
    if transits.len() < 2 {
        return Err(HarnessError::TooFewSamples(transits.len()));
    }
    Ok(transits
        .windows(2)
        .fold(0.0, |j, w| j + ((w[1] - w[0]).abs() - j) / 16.0))
}

/// Student-t interval: `(mean, t_{1-(1-level)/2, n-1} * s / sqrt(n))`.
pub fn confidence_interval(samples: &[f64], level: f64) -> Result<(f64, f64), HarnessError> {
    let n = samples.len();
    if n < 2 {
        return Err(HarnessError::TooFewSamples(n));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if var == 0.0 {
        return Ok((mean, 0.0));
    }
    let t = StudentsT::new(0.0, 1.0, nf - 1.0)
        .expect("n >= 2 gives positive degrees of freedom")
        .inverse_cdf(1.0 - (1.0 - level) / 2.0);
    Ok((mean, t * var.sqrt() / nf.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub flow_id: u64,
    pub kind: FlowKind,
    pub src: NodeId,
    pub dst: NodeId,
    pub start: f64,
    pub admitted: bool,
    /// Started after warmup; only these count towards summaries.
    pub measured: bool,
    pub sent: u64,
    pub delivered: u64,
    pub pdr: Option<f64>,
    pub plr: Option<f64>,
    pub mean_delay_s: Option<f64>,
    pub jitter_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionRecord {
    pub t: f64,
    pub flow_id: u64,
    pub kind: FlowKind,
    pub admitted: bool,
    pub bottleneck: Option<LinkId>,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmsRecord {
    pub id: String,
    pub src: u32,
    pub dst: u32,
    pub sent_at: f64,
    pub phase: Phase,
    pub transmissions: u32,
    pub relay_transmissions: u32,
    pub app_deliveries: u32,
    pub delivered_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub id: u32,
    pub src: u32,
    pub dst: u32,
    pub total_chunks: u32,
    pub chunks_acked: u32,
    pub chunks_sent: u32,
    pub phase: TransferPhase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: u32,
    pub src: u32,
    pub dst: u32,
    pub outcome: VideoOutcome,
    pub flow_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BroadcastRecord {
    pub t: f64,
    pub duration: f64,
    /// `(client, flow id)` per online client.
    pub flows: Vec<(u32, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Flood {
        t: f64,
        node: NodeId,
        reason: String,
        links: Vec<LinkId>,
    },
    Maintenance {
        t: f64,
        node: NodeId,
        link: LinkId,
        action: String,
        until: Option<f64>,
    },
    RouteChange {
        t: f64,
        node: NodeId,
        dest: NodeId,
        old_path: Option<Vec<NodeId>>,
        new_path: Option<Vec<NodeId>>,
    },
    Outage {
        t: f64,
        link: LinkId,
        down: bool,
    },
    Registration {
        t: f64,
        client: u32,
        error: Option<String>,
    },
    PresenceExpired {
        t: f64,
        client: u32,
    },
    ServiceError {
        t: f64,
        action: usize,
        error: String,
    },
}

/// Pooled metrics of one run over its measured foreground flows.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub pdr: Option<f64>,
    pub plr: Option<f64>,
    pub delay_s: Option<f64>,
    pub jitter_s: Option<f64>,
    pub route_changes: u64,
    pub blocked: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub cell_calls: u32,
    pub cell_bg_load: u32,
    pub summary: RunSummary,
    pub flows: Vec<FlowRecord>,
    pub admissions: Vec<AdmissionRecord>,
    pub sms: Vec<SmsRecord>,
    pub transfers: Vec<TransferRecord>,
    pub videos: Vec<VideoRecord>,
    pub broadcasts: Vec<BroadcastRecord>,
    pub drops: BTreeMap<String, u64>,
    pub events: Vec<LogEvent>,
    pub engine: EngineStats,
}

impl RunReport {
    pub fn flow(&self, id: u64) -> Option<&FlowRecord> {
        self.flows.iter().find(|f| f.flow_id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: Option<f64>,
    pub ci95_half: Option<f64>,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAggregate {
    pub calls: u32,
    pub bg_load: u32,
    pub metrics: Vec<MetricSummary>,
}

impl CellAggregate {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == name)
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        self.metric(name).and_then(|m| m.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cells: Vec<CellAggregate>,
    pub runs: Vec<RunReport>,
}

impl MetricsReport {
    pub fn cell(&self, calls: u32, bg_load: u32) -> Option<&CellAggregate> {
        self.cells.iter().find(|c| c.calls == calls && c.bg_load == bg_load)
    }

    /// Builds the report, one aggregate per distinct cell in `runs`.
    pub fn from_runs(mut runs: Vec<RunReport>) -> Self {
        runs.sort_by_key(|r| (r.cell_calls, r.cell_bg_load, r.seed));
        let mut cells: BTreeMap<(u32, u32), Vec<&RunReport>> = BTreeMap::new();
        for r in &runs {
            cells.entry((r.cell_calls, r.cell_bg_load)).or_default().push(r);
        }
        let cells = cells
            .into_iter()
            .map(|((calls, bg_load), rs)| aggregate(calls, bg_load, &rs))
            .collect();
        Self { cells, runs }
    }
}

pub const METRICS: &[&str] = &["pdr", "plr", "delay_s", "jitter_s", "route_changes", "blocked"];

fn aggregate(calls: u32, bg_load: u32, runs: &[&RunReport]) -> CellAggregate {
    let pick = |name: &str, s: &RunSummary| -> Option<f64> {
        match name {
            "pdr" => s.pdr,
            "plr" => s.plr,
            "delay_s" => s.delay_s,
            "jitter_s" => s.jitter_s,
            "route_changes" => Some(s.route_changes as f64),
            "blocked" => Some(s.blocked as f64),
            _ => None,
        }
    };
    let metrics = METRICS
        .iter()
        .map(|&name| {
            let xs: Vec<f64> = runs.iter().filter_map(|r| pick(name, &r.summary)).collect();
            let (mean, half) = match confidence_interval(&xs, 0.95) {
                Ok((m, h)) => (Some(m), Some(h)),
                Err(_) => (xs.first().copied(), None),
            };
            MetricSummary {
                metric: name.to_string(),
                mean,
                ci95_half: half,
                n_seeds: xs.len(),
            }
        })
        .collect();
    CellAggregate { calls, bg_load, metrics }
}
