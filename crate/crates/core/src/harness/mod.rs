//! Scenario loading, replica execution, sweeps and export.

mod export;
mod report;
mod scenario;
mod sweep;
mod world;

use thiserror::Error;

pub use export::{export, write_aggregate_csv, write_flows_csv, ExportFormat, AGGREGATE_HEADER, FLOWS_HEADER};
pub use report::{
    compute_jitter, confidence_interval, AdmissionRecord, BroadcastRecord, CellAggregate, FlowRecord, LogEvent,
    MetricSummary, MetricsReport, RunReport, RunSummary, SmsRecord, TransferRecord, VideoRecord, METRICS,
};
pub use scenario::{
    load_scenario, Action, AttachSpec, ClientSpec, Generator, ProtocolSection, RunSection, Scenario, Workload,
    PRESETS,
};
pub use sweep::{run_seeds, sweep};
pub use world::run_scenario;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error in {origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
