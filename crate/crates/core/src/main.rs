use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use avicast::check::check_trace;
use avicast::config::{ScenarioConfig, Strategy};
use avicast::metrics::metrics_csv;
use avicast::runner::{compare_strategies, run_checked, RunnerError};
use avicast::sim::TraceLog;

const EXIT_CONFIG: u8 = 1;
const EXIT_INVARIANT: u8 = 2;

#[derive(Parser)]
#[command(name = "avicast", version, about = "AVI cache-consistency simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its metrics row and trace.
    Run {
        /// Scenario file or directory (searched under $AVICAST_SCENARIO_DIR too).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Override the scenario's strategy: dta-multicast or ts-broadcast.
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long)]
        out_metrics: PathBuf,
        #[arg(long)]
        out_trace: PathBuf,
    },
    /// Run both strategies over a seed range and write a comparison table.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Inclusive range `a..b` (or `a..=b`), or a single seed.
        #[arg(long, value_parser = parse_seeds)]
        seeds: SeedRange,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-check every invariant against a saved trace.
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
}

#[derive(Debug, Clone, Copy)]
struct SeedRange(u64, u64);

fn parse_seeds(s: &str) -> Result<SeedRange, String> {
    let bad = || format!("expected a seed or a range like 1..20, got `{s}`");
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (a, b.strip_prefix('=').unwrap_or(b)),
        None => (s, s),
    };
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(format!("empty seed range `{s}`"));
    }
    Ok(SeedRange(a, b))
}

/// Write through a temporary file in the target directory, then rename.
fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn fail(code: u8, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

fn load(path: &Path) -> Result<ScenarioConfig, ExitCode> {
    ScenarioConfig::load(path).map_err(|e| fail(EXIT_CONFIG, e))
}

fn cmd_run(
    config: &Path,
    seed: u64,
    strategy: Option<Strategy>,
    out_metrics: &Path,
    out_trace: &Path,
) -> Result<(), ExitCode> {
    let mut cfg = load(config)?;
    if let Some(s) = strategy {
        cfg.strategy = s;
    }
    let run = run_checked(&cfg, seed).map_err(|e| fail(EXIT_CONFIG, e))?;
    let csv = metrics_csv(&[(seed, cfg.strategy, &run.output.metrics)]);
    write_atomic(out_metrics, &csv)
        .map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", out_metrics.display())))?;
    write_atomic(out_trace, &run.output.trace.render())
        .map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", out_trace.display())))?;
    if let Some(v) = run.violations.first() {
        for v in &run.violations {
            eprintln!("{v}");
        }
        return Err(fail(
            EXIT_INVARIANT,
            format!(
                "{} invariant violation(s), first: {v}",
                run.violations.len()
            ),
        ));
    }
    Ok(())
}

fn cmd_compare(config: &Path, seeds: SeedRange, out: &Path) -> Result<(), ExitCode> {
    let cfg = load(config)?;
    let seeds: Vec<u64> = (seeds.0..=seeds.1).collect();
    let result = compare_strategies(&cfg, &seeds).map_err(|e| match e {
        RunnerError::Config(e) => fail(EXIT_CONFIG, e),
        RunnerError::Compare(e) => fail(EXIT_CONFIG, e),
    })?;
    let table = result.comparison.render();
    write_atomic(out, &table).map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", out.display())))?;
    print!("{table}");
    if let Some((s, seed, v)) = result.violations.first() {
        for (s, seed, v) in &result.violations {
            eprintln!("{} seed {seed}: {v}", s.as_str());
        }
        return Err(fail(
            EXIT_INVARIANT,
            format!("{} seed {seed}: {v}", s.as_str()),
        ));
    }
    Ok(())
}

fn cmd_replay(trace: &Path) -> Result<(), ExitCode> {
    let text = std::fs::read_to_string(trace)
        .map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", trace.display())))?;
    let log = TraceLog::parse(&text).map_err(|e| fail(EXIT_CONFIG, e))?;
    let violations = check_trace(&log);
    if let Some(v) = violations.first() {
        for v in &violations {
            eprintln!("{v}");
        }
        return Err(fail(
            EXIT_INVARIANT,
            format!("{} invariant violation(s), first: {v}", violations.len()),
        ));
    }
    println!(
        "ok: {} records, {} invariants checked",
        log.records.len(),
        avicast::check::INVARIANTS.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            strategy,
            out_metrics,
            out_trace,
        } => cmd_run(&config, seed, strategy, &out_metrics, &out_trace),
        Command::Compare { config, seeds, out } => cmd_compare(&config, seeds, &out),
        Command::Replay { trace } => cmd_replay(&trace),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
