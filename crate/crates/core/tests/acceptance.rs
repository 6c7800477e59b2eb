//! Acceptance criteria 1-9, one PASS/FAIL line each.
//!
//! Everything runs inside one test so that the wall-clock budgets are
//! measured without other tests competing for the CPU.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{crafted, ledger, mac, routing, sms};
use meshsim::harness::{export, run_seeds, sweep, ExportFormat, MetricsReport, Scenario};

const CALLS: [u32; 5] = [1, 2, 5, 10, 20];
const BACKGROUND: [u32; 4] = [2, 5, 10, 20];

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn grid(preset: &str) -> (MetricsReport, Duration) {
    let sc = Scenario::preset(preset).unwrap();
    let seeds: Vec<u64> = (1..=10).collect();
    let start = Instant::now();
    let report = sweep(&sc, &CALLS, &BACKGROUND, &seeds).unwrap();
    (report, start.elapsed())
}

fn mean(r: &MetricsReport, c: u32, b: u32, metric: &str) -> f64 {
    r.cell(c, b).and_then(|cell| cell.mean(metric)).unwrap_or(f64::NAN)
}

fn half(r: &MetricsReport, c: u32, b: u32, metric: &str) -> f64 {
    r.cell(c, b)
        .and_then(|cell| cell.metric(metric))
        .and_then(|m| m.ci95_half)
        .unwrap_or(0.0)
}

fn cells() -> impl Iterator<Item = (u32, u32)> {
    CALLS.into_iter().flat_map(|c| BACKGROUND.into_iter().map(move |b| (c, b)))
}

fn criterion1(indoor: &MetricsReport, took: Duration) -> Outcome {
    let seeds = indoor.cells.iter().map(|c| c.metric("pdr").unwrap().n_seeds).min().unwrap_or(0);
    let (worst, at) = cells()
        .map(|(c, b)| (mean(indoor, c, b, "pdr"), (c, b)))
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .unwrap();
    check(
        worst >= 0.90 && seeds >= 10 && took.as_secs_f64() <= 300.0,
        format!(
            "min mean PDR {worst:.4} at {at:?} over {seeds} seeds, sweep {:.1} s",
            took.as_secs_f64()
        ),
    )
}

fn criterion2(indoor: &MetricsReport) -> Outcome {
    let worst = cells().map(|(c, b)| mean(indoor, c, b, "delay_s")).fold(0.0, f64::max);
    let rising: Vec<bool> = BACKGROUND
        .iter()
        .map(|&b| mean(indoor, 20, b, "delay_s") > mean(indoor, 2, b, "delay_s"))
        .collect();
    check(
        worst < 0.1 && rising.iter().all(|&r| r),
        format!(
            "max mean delay {:.2} ms; delay(20 calls) > delay(2 calls) for bg {:?}: {:?}",
            worst * 1e3,
            BACKGROUND,
            rising
        ),
    )
}

fn criterion3(indoor: &MetricsReport, outdoor: &MetricsReport) -> Outcome {
    let total = cells().count();
    let worse = cells()
        .filter(|&(c, b)| {
            mean(outdoor, c, b, "pdr") < mean(indoor, c, b, "pdr")
                && mean(outdoor, c, b, "delay_s") > mean(indoor, c, b, "delay_s")
        })
        .count();
    let mut trend_ok = true;
    for c in CALLS {
        let mut inversions = 0;
        for w in BACKGROUND.windows(2) {
            let (lo, hi) = (mean(outdoor, c, w[0], "pdr"), mean(outdoor, c, w[1], "pdr"));
            if hi > lo {
                let overlap = hi - lo <= half(outdoor, c, w[0], "pdr") + half(outdoor, c, w[1], "pdr");
                inversions += 1;
                trend_ok &= overlap;
            }
        }
        trend_ok &= inversions <= 1;
    }
    check(
        worse * 5 >= total * 4 && trend_ok,
        format!("outdoor worse in {worse}/{total} cells; PDR trend in background load holds: {trend_ok}"),
    )
}

fn criterion4() -> Outcome {
    let start = Instant::now();
    let laws: Vec<_> = [0.3, 0.5, 0.8]
        .into_iter()
        .enumerate()
        .map(|(i, p)| mac::retry_law(p, 100_000, i as u64 + 1))
        .collect();
    let took = start.elapsed().as_secs_f64();
    let ok = laws.iter().all(|l| l.delivery_ok() && l.notification_ok());
    let detail = laws
        .iter()
        .map(|l| {
            format!(
                "p={} delivered {:.4} (oracle {:.4}), notifications {}",
                l.p,
                l.delivered as f64 / l.frames as f64,
                l.expected,
                l.notifications
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    check(ok && took <= 10.0, format!("{detail}; {took:.2} s"))
}

fn criterion5() -> Outcome {
    let start = Instant::now();
    routing::elp_trials(200, 1);
    let took = start.elapsed().as_secs_f64();
    check(
        took <= 30.0,
        format!("200 graphs: costs equal exhaustive minimum, tables loop-free; {took:.2} s"),
    )
}

fn criterion6() -> Outcome {
    let seeds: Vec<u64> = (1..=10).collect();
    let elp = crafted::shortcut_pdr("elp", &seeds);
    let hop = crafted::shortcut_pdr("hop_count", &seeds);
    check(
        elp - hop >= 0.10,
        format!(
            "ELP PDR {elp:.4} vs hop count {hop:.4} (gap {:.1} points, ELP oracle 0.9604)",
            (elp - hop) * 100.0
        ),
    )
}

fn criterion7() -> Outcome {
    let seeds = [1, 2, 3, 4, 5];
    let kept = crafted::outage_logs("maintainer", &seeds);
    let broken = crafted::outage_logs("breakage", &seeds);
    let kept_ok = kept
        .iter()
        .all(|l| l.attributable_floods == 0 && l.suppressions >= 1 && l.returned_to_original());
    let broken_ok = broken.iter().all(|l| l.attributable_floods >= 1 && l.reroutes >= 1);
    check(
        kept_ok && broken_ok,
        format!(
            "maintainer floods {:?}, back on original route {:?}; breakage floods {:?}, recomputes {:?}",
            kept.iter().map(|l| l.attributable_floods).collect::<Vec<_>>(),
            kept.iter().map(|l| l.returned_to_original()).collect::<Vec<_>>(),
            broken.iter().map(|l| l.attributable_floods).collect::<Vec<_>>(),
            broken.iter().map(|l| l.reroutes).collect::<Vec<_>>(),
        ),
    )
}

fn criterion8() -> Outcome {
    sms::online_walk();
    sms::all_acks_lost();
    sms::offline_walk();
    sms::duplicate_arrival();
    ledger::conservation(10_000);
    ledger::admit_release_roundtrip();
    Ok("SMS loss-pattern walks and 10^4 ledger sequences hold; worked examples run as unit tests".into())
}

fn criterion9() -> Outcome {
    let mut compared = 0;
    for preset in ["indoor22", "outdoor7"] {
        let sc = Scenario::preset(preset).unwrap();
        for format in [ExportFormat::Csv, ExportFormat::Json] {
            let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
            let files: Vec<_> = dirs
                .iter()
                .map(|d| export(&run_seeds(&sc, &[42]).unwrap(), format, d.path()).unwrap())
                .collect();
            if files[0].len() != files[1].len() {
                return Err(format!("{preset}: different file sets"));
            }
            for (a, b) in files[0].iter().zip(&files[1]) {
                if fs::read(a).unwrap() != fs::read(b).unwrap() {
                    return Err(format!("{preset}: {} differs", a.display()));
                }
                compared += 1;
            }
        }
    }
    Ok(format!("{compared} export files byte-identical across repeated runs"))
}

fn report(n: u32, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match &outcome {
        Ok(d) => println!("PASS criterion {n}: {d} [{secs:.1} s]"),
        Err(d) => println!("FAIL criterion {n}: {d} [{secs:.1} s]"),
    }
    outcome.is_ok()
}

#[test]
fn acceptance() {
    let (indoor, indoor_took) = grid("indoor22");
    let (outdoor, _) = grid("outdoor7");
    let results = [
        report(1, || criterion1(&indoor, indoor_took)),
        report(2, || criterion2(&indoor)),
        report(3, || criterion3(&indoor, &outdoor)),
        report(4, criterion4),
        report(5, criterion5),
        report(6, criterion6),
        report(7, criterion7),
        report(8, criterion8),
        report(9, criterion9),
    ];
    let failed: Vec<usize> = (1..=9).filter(|&i| !results[i - 1]).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
