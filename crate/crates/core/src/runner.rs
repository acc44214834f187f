//! Checked runs and multi-seed strategy comparison.

use rayon::prelude::*;
use thiserror::Error;

use crate::check::{check_trace, InvariantViolation};
use crate::config::{ConfigError, ScenarioConfig, Strategy};
use crate::metrics::{compare, CompareError, Comparison, RunRecord};
use crate::sim::{run, RunOutput};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Compare(#[from] CompareError),
}

#[derive(Debug, Clone)]
pub struct CheckedRun {
    pub output: RunOutput,
    pub violations: Vec<InvariantViolation>,
}

/// Run a scenario and re-check its trace.
pub fn run_checked(cfg: &ScenarioConfig, seed: u64) -> Result<CheckedRun, ConfigError> {
    let output = run(cfg, seed)?;
    let violations = check_trace(&output.trace);
    Ok(CheckedRun { output, violations })
}

#[derive(Debug, Clone)]
pub struct StrategyComparison {
    pub comparison: Comparison,
    pub dta: Vec<RunRecord>,
    pub ts: Vec<RunRecord>,
    /// Invariant failures from any run, by strategy and seed.
    pub violations: Vec<(Strategy, u64, InvariantViolation)>,
}

/// Run both strategies over `seeds` in parallel and compare them, with
/// dta-multicast as side A. Results are ordered by seed.
pub fn compare_strategies(
    cfg: &ScenarioConfig,
    seeds: &[u64],
) -> Result<StrategyComparison, RunnerError> {
    cfg.validate()?;
    let jobs: Vec<(Strategy, u64)> = [Strategy::DtaMulticast, Strategy::TsBroadcast]
        .into_iter()
        .flat_map(|s| seeds.iter().map(move |seed| (s, *seed)))
        .collect();
    let results: Vec<(Strategy, u64, CheckedRun, String)> = jobs
        .par_iter()
        .map(|&(strategy, seed)| {
            let c = cfg.with_strategy(strategy);
            let run = run_checked(&c, seed)?;
            Ok((strategy, seed, run, c.comparison_key()))
        })
        .collect::<Result<_, ConfigError>>()?;

    let mut dta = Vec::new();
    let mut ts = Vec::new();
    let mut violations = Vec::new();
    for (strategy, seed, run, key) in results {
        violations.extend(run.violations.into_iter().map(|v| (strategy, seed, v)));
        let record = RunRecord {
            seed,
            strategy,
            config_key: key,
            metrics: run.output.metrics,
        };
        match strategy {
            Strategy::DtaMulticast => dta.push(record),
            Strategy::TsBroadcast => ts.push(record),
        }
    }
    let comparison = compare(&dta, &ts)?;
    Ok(StrategyComparison {
        comparison,
        dta,
        ts,
        violations,
    })
}
