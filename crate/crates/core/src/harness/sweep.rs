//! Multi-seed runs and call-count by background-load sweeps.

use rayon::prelude::*;

use super::report::MetricsReport;
use super::scenario::Scenario;
use super::world::run_scenario;
use super::ScenarioError;

/// Runs `sc` once per seed; replicas execute in parallel.
pub fn run_seeds(sc: &Scenario, seeds: &[u64]) -> Result<MetricsReport, ScenarioError> {
    sc.validate()?;
    let runs = seeds
        .par_iter()
        .map(|&s| run_scenario(sc, s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MetricsReport::from_runs(runs))
}

/// One aggregate per `(calls, background)` cell over `seeds`. Cells are
/// independent, so grid order does not affect the result.
pub fn sweep(sc: &Scenario, calls: &[u32], background: &[u32], seeds: &[u64]) -> Result<MetricsReport, ScenarioError> {
    sc.validate()?;
    let mut cells: Vec<(u32, u32)> = calls
        .iter()
        .flat_map(|&c| background.iter().map(move |&b| (c, b)))
        .collect();
    cells.sort_unstable();
    cells.dedup();
    let jobs: Vec<(Scenario, u64)> = cells
        .iter()
        .flat_map(|&(c, b)| {
            let cell = sc.with_cell(c, b);
            seeds.iter().map(move |&s| (cell.clone(), s))
        })
        .collect();
    let runs = jobs
        .par_iter()
        .map(|(cell, s)| run_scenario(cell, *s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MetricsReport::from_runs(runs))
}
