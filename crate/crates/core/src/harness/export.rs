//! CSV and JSON export of a [`MetricsReport`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::report::{MetricsReport, RunReport};
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

pub const AGGREGATE_HEADER: &str = "cell_calls,cell_bg_load,metric,mean,ci95_half,n_seeds";
pub const FLOWS_HEADER: &str = "flow_id,kind,src,dst,sent,delivered,pdr,mean_delay_s,jitter_s";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_aggregate_csv(report: &MetricsReport, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{AGGREGATE_HEADER}")?;
    for c in &report.cells {
        for m in &c.metrics {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                c.calls,
                c.bg_load,
                m.metric,
                opt(m.mean),
                opt(m.ci95_half),
                m.n_seeds
            )?;
        }
    }
    Ok(())
}

/// Measured flows of one run.
pub fn write_flows_csv(run: &RunReport, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{FLOWS_HEADER}")?;
    for f in run.flows.iter().filter(|f| f.measured) {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            f.flow_id,
            f.kind.as_str(),
            f.src,
            f.dst,
            f.sent,
            f.delivered,
            opt(f.pdr),
            opt(f.mean_delay_s),
            opt(f.jitter_s)
        )?;
    }
    Ok(())
}

fn flows_file(run: &RunReport) -> String {
    format!("flows_c{}_b{}_s{}.csv", run.cell_calls, run.cell_bg_load, run.seed)
}

/// Writes the report into `dir` and returns the files written.
///
/// CSV produces `aggregate.csv` plus one per-flow file per run; JSON
/// produces `report.json`.
pub fn export(report: &MetricsReport, format: ExportFormat, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    match format {
        ExportFormat::Csv => {
            let path = dir.join("aggregate.csv");
            let mut buf = Vec::new();
            write_aggregate_csv(report, &mut buf)?;
            fs::write(&path, buf)?;
            written.push(path);
            for run in &report.runs {
                let path = dir.join(flows_file(run));
                let mut buf = Vec::new();
                write_flows_csv(run, &mut buf)?;
                fs::write(&path, buf)?;
                written.push(path);
            }
        }
        ExportFormat::Json => {
            let path = dir.join("report.json");
            fs::write(&path, serde_json::to_vec_pretty(report)?)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_gives_header_only() {
        let mut buf = Vec::new();
        write_aggregate_csv(&MetricsReport::default(), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{AGGREGATE_HEADER}\n"));
    }
}
