mod common;

use std::fmt::Write;

use avicast::config::{ScenarioConfig, Strategy};
use avicast::runner::run_checked;
use avicast::sim::{gen_workload, EventKind, WorkloadParams, WorkloadShape};

use common::{assert_golden, scenario};

#[test]
fn fig5_14_scenario_trace_is_frozen() {
    let run = run_checked(&scenario("paper_fig5_14"), 1).unwrap();
    assert!(run.violations.is_empty(), "{}", run.violations[0]);
    assert_golden("paper_fig5_14.trace", &run.output.trace.render());
}

#[test]
fn default_metrics_are_frozen() {
    let mut csv = String::new();
    for strategy in [Strategy::DtaMulticast, Strategy::TsBroadcast] {
        let cfg = ScenarioConfig::default().with_strategy(strategy);
        for seed in 1..=3 {
            let out = avicast::run(&cfg, seed).unwrap();
            csv.push_str(&out.metrics.csv_row(seed, strategy));
            csv.push('\n');
        }
    }
    assert_golden("default_metrics.csv", &csv);
}

fn describe(kind: &EventKind) -> String {
    match kind {
        EventKind::LocalQuery { client, item } => format!("query {client} item={}", item.0),
        EventKind::ScheduledUpdate(item) => format!("update item={}", item.0),
        EventKind::Sleep(n) => format!("sleep {n}"),
        EventKind::Wake(n) => format!("wake {n}"),
        other => format!("{other:?}"),
    }
}

#[test]
fn workload_seed_42_prefix_is_frozen() {
    let shape = WorkloadShape {
        num_clients: 10,
        num_items: 50,
        horizon: 100_000,
        max_distance: 100.0,
        max_access: 10.0,
    };
    let w = gen_workload(&WorkloadParams::default(), &shape, 42);
    let mut text = String::new();
    for (t, kind) in w.events.iter().take(10) {
        let _ = writeln!(text, "{} {}", t.ticks(), describe(kind));
    }
    for (i, f) in w.factors.iter().enumerate() {
        let _ = writeln!(
            text,
            "client:{} energy={:.6} distance={:.6} access={:.6}",
            i + 1,
            f.energy,
            f.distance,
            f.access_rate
        );
    }
    assert_golden("workload_seed42.txt", &text);
}
