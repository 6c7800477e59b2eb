use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use meshsim::harness::{self, ExportFormat, MetricsReport, Scenario, ScenarioError};

#[derive(Parser)]
#[command(name = "meshsim", version, about = "Wireless mesh network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for ExportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ExportFormat::Csv,
            Format::Json => ExportFormat::Json,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or preset for one or more seeds.
    Run {
        scenario: String,
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Inclusive range `N..M`.
        #[arg(long, value_parser = parse_range_u64)]
        seeds: Option<List<u64>>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Sweep foreground calls against background load.
    Sweep {
        scenario: String,
        /// Inclusive range `A..B` or a comma list.
        #[arg(long, value_parser = parse_range_u32)]
        calls: List<u32>,
        #[arg(long, value_parser = parse_range_u32)]
        bg: List<u32>,
        /// Number of seeds, `1..=K`.
        #[arg(long)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Parse and validate a scenario.
    Validate { scenario: String },
}

fn parse_list<T: std::str::FromStr + Copy + std::ops::Add<Output = T> + PartialOrd + From<u8>>(
    s: &str,
) -> Result<Vec<T>, String> {
    let bad = || format!("expected N, N..M or a comma list, got `{s}`");
    let mut out = Vec::new();
    for part in s.split(',') {
        match part.split_once("..") {
            Some((a, b)) => {
                let a: T = a.trim().parse().map_err(|_| bad())?;
                let b: T = b.trim().parse().map_err(|_| bad())?;
                if a > b {
                    return Err(format!("empty range `{part}`"));
                }
                let mut x = a;
                while x <= b {
                    out.push(x);
                    x = x + T::from(1);
                }
            }
            None => out.push(part.trim().parse().map_err(|_| bad())?),
        }
    }
    Ok(out)
}

#[derive(Clone)]
struct List<T>(Vec<T>);

fn parse_range_u64(s: &str) -> Result<List<u64>, String> {
    parse_list(s).map(List)
}

fn parse_range_u32(s: &str) -> Result<List<u32>, String> {
    parse_list(s).map(List)
}

fn emit(report: &MetricsReport, out: Option<PathBuf>, format: Format) -> Result<(), String> {
    match out {
        Some(dir) => {
            let files = harness::export(report, format.into(), &dir).map_err(|e| e.to_string())?;
            for f in files {
                println!("{}", f.display());
            }
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            match format {
                Format::Csv => harness::write_aggregate_csv(report, &mut lock).map_err(|e| e.to_string())?,
                Format::Json => {
                    serde_json::to_writer_pretty(&mut lock, report).map_err(|e| e.to_string())?;
                    writeln!(lock).map_err(|e| e.to_string())?;
                }
            }
        }
    }
    Ok(())
}

enum Failure {
    Validation(ScenarioError),
    Runtime(String),
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Validate { scenario } => {
            let sc = Scenario::resolve(&scenario).map_err(Failure::Validation)?;
            let topo = sc.build_topology().map_err(Failure::Validation)?;
            println!(
                "ok: {} nodes, {} links, {} clients, {} actions",
                topo.nodes().len(),
                topo.links().len(),
                sc.workload.clients.len(),
                sc.workload.actions.len()
            );
            Ok(())
        }
        Command::Run {
            scenario,
            seed,
            seeds,
            out,
            format,
        } => {
            let sc = Scenario::resolve(&scenario).map_err(Failure::Validation)?;
            let seeds = match (seed, seeds) {
                (Some(s), _) => vec![s],
                (None, Some(List(list))) => list,
                (None, None) => sc.run.seeds.clone(),
            };
            let report = harness::run_seeds(&sc, &seeds).map_err(Failure::Validation)?;
            emit(&report, out, format).map_err(Failure::Runtime)
        }
        Command::Sweep {
            scenario,
            calls,
            bg,
            seeds,
            out,
            format,
        } => {
            let sc = Scenario::resolve(&scenario).map_err(Failure::Validation)?;
            let (calls, bg) = (calls.0, bg.0);
            if calls.is_empty() || bg.is_empty() || seeds == 0 {
                return Err(Failure::Validation(ScenarioError::Validation(vec![
                    "sweep grid must be non-empty".into(),
                ])));
            }
            let seeds: Vec<u64> = (1..=seeds).collect();
            let report = harness::sweep(&sc, &calls, &bg, &seeds).map_err(Failure::Validation)?;
            emit(&report, out, format).map_err(Failure::Runtime)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
