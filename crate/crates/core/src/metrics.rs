//! Per-run counters, the metrics CSV format, and strategy comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::config::Strategy;
use crate::model::Ticks;

pub const METRICS_CSV_VERSION: &str = "# avicast-metrics v1";
pub const COMPARE_VERSION: &str = "# avicast-compare v1";

/// Latency counts keyed by ticks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LatencyHistogram {
    counts: BTreeMap<Ticks, u64>,
    total: u64,
    sum: u128,
}

impl LatencyHistogram {
    pub fn record(&mut self, ticks: Ticks) {
        *self.counts.entry(ticks).or_default() += 1;
        self.total += 1;
        self.sum += ticks as u128;
    }

    pub fn count(&self) -> u64 {
        self.total
    }

    /// Nearest-rank percentile; zero when empty.
    pub fn percentile(&self, p: f64) -> Ticks {
        if self.total == 0 {
            return 0;
        }
        let rank = ((p / 100.0) * self.total as f64).ceil().max(1.0) as u64;
        let mut seen = 0;
        for (&v, &c) in &self.counts {
            seen += c;
            if seen >= rank {
                return v;
            }
        }
        self.max()
    }

    pub fn max(&self) -> Ticks {
        self.counts.keys().next_back().copied().unwrap_or(0)
    }

    pub fn mean(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.sum as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    /// Query messages arriving at the base station.
    pub server_uplinks: u64,
    /// Query messages arriving at a DTA.
    pub dta_uplinks: u64,
    pub ir_count: u64,
    pub ir_bytes: u64,
    pub queries_issued: u64,
    pub answered_local: u64,
    pub answered_dta: u64,
    pub answered_server: u64,
    pub latency: LatencyHistogram,
    pub stale_answers: u64,
}

impl Metrics {
    pub fn answered(&self) -> u64 {
        self.answered_local + self.answered_dta + self.answered_server
    }

    pub fn hit_ratio(&self) -> f64 {
        if self.queries_issued == 0 {
            0.0
        } else {
            self.answered_local as f64 / self.queries_issued as f64
        }
    }

    /// Named numeric columns in CSV order (after `seed,strategy`).
    pub fn columns(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("server_uplinks", self.server_uplinks as f64),
            ("dta_uplinks", self.dta_uplinks as f64),
            ("ir_count", self.ir_count as f64),
            ("ir_bytes", self.ir_bytes as f64),
            ("queries_issued", self.queries_issued as f64),
            ("answered_local", self.answered_local as f64),
            ("answered_dta", self.answered_dta as f64),
            ("answered_server", self.answered_server as f64),
            ("latency_p50", self.latency.percentile(50.0) as f64),
            ("latency_p90", self.latency.percentile(90.0) as f64),
            ("latency_p99", self.latency.percentile(99.0) as f64),
            ("latency_max", self.latency.max() as f64),
            ("latency_mean", self.latency.mean()),
            ("stale_answers", self.stale_answers as f64),
            ("hit_ratio", self.hit_ratio()),
        ]
    }

    pub fn csv_header() -> String {
        let names: Vec<_> = Metrics::default()
            .columns()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        format!("seed,strategy,{}", names.join(","))
    }

    pub fn csv_row(&self, seed: u64, strategy: Strategy) -> String {
        let mut row = format!("{seed},{}", strategy.as_str());
        for (name, value) in self.columns() {
            row.push(',');
            row.push_str(&fmt_value(name, value));
        }
        row
    }
}

fn fmt_value(name: &str, v: f64) -> String {
    if name == "latency_mean" || name == "hit_ratio" {
        format!("{v:.6}")
    } else {
        format!("{}", v as u64)
    }
}

/// A full metrics CSV document for a set of runs.
pub fn metrics_csv(rows: &[(u64, Strategy, &Metrics)]) -> String {
    let mut s = format!("{METRICS_CSV_VERSION}\n{}\n", Metrics::csv_header());
    for (seed, strategy, m) in rows {
        s.push_str(&m.csv_row(*seed, *strategy));
        s.push('\n');
    }
    s
}

/// One finished run, tagged with what it is comparable against.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub strategy: Strategy,
    /// Canonical rendering of the scenario with the strategy removed.
    pub config_key: String,
    pub metrics: Metrics,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompareError {
    #[error("nothing to compare")]
    Empty,
    #[error("runs differ in seeds: {0:?} vs {1:?}")]
    SeedMismatch(Vec<u64>, Vec<u64>),
    #[error("run for seed {seed} used a different scenario")]
    ConfigMismatch { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub metric: &'static str,
    pub a_mean: f64,
    pub b_mean: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub a: Strategy,
    pub b: Strategy,
    pub seeds: Vec<u64>,
    pub rows: Vec<ComparisonRow>,
    /// Seeds where side A needed more base-station uplinks than side B.
    pub flagged_uplinks: Vec<u64>,
    /// Seeds where side A answered more slowly on average than side B.
    pub flagged_latency: Vec<u64>,
}

impl Comparison {
    pub fn row(&self, metric: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{COMPARE_VERSION}");
        let seeds: Vec<_> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(
            s,
            "# a={} b={} seeds={}",
            self.a.as_str(),
            self.b.as_str(),
            seeds.join(",")
        );
        let _ = writeln!(s, "metric,a_mean,b_mean,ratio");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6}",
                r.metric, r.a_mean, r.b_mean, r.ratio
            );
        }
        let list = |v: &[u64]| {
            if v.is_empty() {
                "none".to_string()
            } else {
                v.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
            }
        };
        let _ = writeln!(s, "# flagged-uplinks: {}", list(&self.flagged_uplinks));
        let _ = writeln!(s, "# flagged-latency: {}", list(&self.flagged_latency));
        s
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if a == b {
        1.0
    } else if b == 0.0 {
        f64::INFINITY
    } else {
        a / b
    }
}

/// Compare two sets of runs seed by seed.
pub fn compare(a: &[RunRecord], b: &[RunRecord]) -> Result<Comparison, CompareError> {
    if a.is_empty() || b.is_empty() {
        return Err(CompareError::Empty);
    }
    let mut a: Vec<_> = a.iter().collect();
    let mut b: Vec<_> = b.iter().collect();
    a.sort_by_key(|r| r.seed);
    b.sort_by_key(|r| r.seed);
    let seeds_a: Vec<_> = a.iter().map(|r| r.seed).collect();
    let seeds_b: Vec<_> = b.iter().map(|r| r.seed).collect();
    if seeds_a != seeds_b {
        return Err(CompareError::SeedMismatch(seeds_a, seeds_b));
    }
    let key = &a[0].config_key;
    for r in a.iter().chain(b.iter()) {
        if &r.config_key != key {
            return Err(CompareError::ConfigMismatch { seed: r.seed });
        }
    }
    let n = a.len() as f64;
    let names = Metrics::default().columns();
    let rows = names
        .iter()
        .enumerate()
        .map(|(i, (metric, _))| {
            let mean = |side: &[&RunRecord]| {
                side.iter().map(|r| r.metrics.columns()[i].1).sum::<f64>() / n
            };
            let (am, bm) = (mean(&a), mean(&b));
            ComparisonRow {
                metric,
                a_mean: am,
                b_mean: bm,
                ratio: ratio(am, bm),
            }
        })
        .collect();
    let mut flagged_uplinks = Vec::new();
    let mut flagged_latency = Vec::new();
    for (ra, rb) in a.iter().zip(&b) {
        if ra.metrics.server_uplinks > rb.metrics.server_uplinks {
            flagged_uplinks.push(ra.seed);
        }
        if ra.metrics.latency.mean() > rb.metrics.latency.mean() {
            flagged_latency.push(ra.seed);
        }
    }
    Ok(Comparison {
        a: a[0].strategy,
        b: b[0].strategy,
        seeds: seeds_a,
        rows,
        flagged_uplinks,
        flagged_latency,
    })
}
