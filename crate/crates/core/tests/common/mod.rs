#![allow(dead_code)]

use std::path::PathBuf;

use avicast::config::ScenarioConfig;
use avicast::sim::{TraceLog, TraceRecord};

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn scenario(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(&repo_root().join("scenarios").join(name)).expect("shipped scenario loads")
}

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

/// Compare against a frozen file; `AVICAST_BLESS=1` rewrites it instead.
pub fn assert_golden(name: &str, actual: &str) {
    let path = golden_path(name);
    if std::env::var_os("AVICAST_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected =
        std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(
        expected == actual,
        "{} differs from the frozen golden file",
        path.display()
    );
}

pub fn records<'a>(log: &'a TraceLog, ev: &'a str) -> impl Iterator<Item = &'a TraceRecord> + 'a {
    log.records.iter().filter(move |r| r.ev == ev)
}

pub fn num(r: &TraceRecord, key: &str) -> u64 {
    r.get(key)
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| panic!("record {r} has no numeric `{key}`"))
}

/// False-valid / false-invalid tick counts by sweeping the timeline one
/// tick at a time. For every tick, each update votes on whether its own
/// copy is truly current and whether its AVI still calls it valid; a
/// disagreement counts for that update. Written without reference to the
/// closed form.
pub fn fvp_fip_sweep(times: &[u64], avis: &[u64], horizon: u64) -> (u64, u64) {
    let end = times
        .iter()
        .zip(avis)
        .map(|(t, a)| t + a)
        .chain([horizon])
        .max()
        .unwrap_or(horizon);
    let mut fvp = 0;
    let mut fip = 0;
    for tick in 0..end {
        for (k, (&t, &a)) in times.iter().zip(avis).enumerate() {
            if tick < t {
                continue;
            }
            let is_last = k + 1 == times.len();
            let successor = if is_last { horizon } else { times[k + 1] };
            if is_last && tick >= horizon {
                continue;
            }
            let truly = tick < successor;
            let claimed = tick < t + a;
            if claimed && !truly {
                fvp += 1;
            }
            if truly && !claimed {
                fip += 1;
            }
        }
    }
    (fvp, fip)
}

/// EWMA interval estimate rounded half-up, recomputed from scratch: the
/// estimate after each update time in `times` (creation at `times[0]`).
pub fn ewma_avis(times: &[u64], alpha: f64, default_avi: u64, min_avi: u64) -> Vec<u64> {
    let mut out = Vec::with_capacity(times.len());
    let mut smoothed: Option<f64> = None;
    for (i, t) in times.iter().enumerate() {
        if i == 0 {
            out.push(default_avi.max(min_avi));
            continue;
        }
        let gap = (t - times[i - 1]) as f64;
        let s = match smoothed {
            None => gap,
            Some(prev) => alpha * gap + (1.0 - alpha) * prev,
        };
        smoothed = Some(s);
        out.push(((s + 0.5).floor() as u64).max(min_avi));
    }
    out
}
