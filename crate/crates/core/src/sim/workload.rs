//! Synthetic workload and candidacy factors.
//!
//! Everything is drawn from one ChaCha8 stream seeded with the run seed, in
//! a fixed order: sleep/wake alternation per client, then queries per client,
//! then updates per item, then candidacy factors per client. Clients are
//! visited in index order and items in id order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Zipf};
use serde::{Deserialize, Serialize};

use super::EventKind;
use crate::election::CandidateFactors;
use crate::model::{ItemId, NodeId, SimTime, Ticks};

const TICKS_PER_SECOND: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadParams {
    /// Mean queries per second per client; 0 disables queries.
    pub query_rate: f64,
    /// Mean ticks between updates of one item.
    pub update_mean: f64,
    pub zipf_theta: f64,
    /// Mean sleeps per second of awake time per client; 0 disables sleep.
    pub sleep_rate: f64,
    /// Mean sleep length in ticks.
    pub sleep_mean: f64,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        WorkloadParams {
            query_rate: 1.0,
            update_mean: 2000.0,
            zipf_theta: 0.8,
            sleep_rate: 0.01,
            sleep_mean: 5000.0,
        }
    }
}

/// Size of the world the workload is generated for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkloadShape {
    pub num_clients: u32,
    pub num_items: u32,
    pub horizon: Ticks,
    pub max_distance: f64,
    pub max_access: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    /// Sorted by time; ties keep generation order.
    pub events: Vec<(SimTime, EventKind)>,
    /// One entry per client, index 0 is client 1.
    pub factors: Vec<CandidateFactors>,
}

fn exp_ticks(rng: &mut ChaCha8Rng, dist: &Exp<f64>) -> Ticks {
    let x: f64 = dist.sample(rng);
    (x.round() as Ticks).max(1)
}

fn exp_with_mean(mean: f64) -> Exp<f64> {
    Exp::new(1.0 / mean).expect("validated mean is positive and finite")
}

pub fn gen_workload(params: &WorkloadParams, shape: &WorkloadShape, seed: u64) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = shape.horizon;
    let mut events: Vec<(SimTime, EventKind)> = Vec::new();

    let mut asleep: Vec<Vec<(Ticks, Ticks)>> = Vec::with_capacity(shape.num_clients as usize);
    for c in 1..=shape.num_clients {
        let client = NodeId::client(c);
        let mut spans = Vec::new();
        if params.sleep_rate > 0.0 {
            let awake = exp_with_mean(TICKS_PER_SECOND / params.sleep_rate);
            let nap = exp_with_mean(params.sleep_mean);
            let mut t: Ticks = 0;
            loop {
                t = t.saturating_add(exp_ticks(&mut rng, &awake));
                if t > horizon {
                    break;
                }
                let d = exp_ticks(&mut rng, &nap);
                events.push((SimTime(t), EventKind::Sleep(client)));
                let end = t.saturating_add(d);
                if end <= horizon {
                    events.push((SimTime(end), EventKind::Wake(client)));
                }
                spans.push((t, end));
                t = end;
            }
        }
        asleep.push(spans);
    }

    if params.query_rate > 0.0 {
        let gap = exp_with_mean(TICKS_PER_SECOND / params.query_rate);
        let zipf = Zipf::new(shape.num_items as f64, params.zipf_theta)
            .expect("validated zipf parameters");
        for c in 1..=shape.num_clients {
            let client = NodeId::client(c);
            let spans = &asleep[c as usize - 1];
            let mut t: Ticks = 0;
            loop {
                t = t.saturating_add(exp_ticks(&mut rng, &gap));
                if t > horizon {
                    break;
                }
                let rank: f64 = zipf.sample(&mut rng);
                let item = ItemId((rank as u32).clamp(1, shape.num_items) - 1);
                if spans.iter().any(|(s, e)| *s <= t && t < *e) {
                    continue;
                }
                events.push((SimTime(t), EventKind::LocalQuery { client, item }));
            }
        }
    }

    let gap = exp_with_mean(params.update_mean);
    for i in 0..shape.num_items {
        let mut t: Ticks = 0;
        loop {
            t = t.saturating_add(exp_ticks(&mut rng, &gap));
            if t > horizon {
                break;
            }
            events.push((SimTime(t), EventKind::ScheduledUpdate(ItemId(i))));
        }
    }

    let factors = (0..shape.num_clients)
        .map(|_| CandidateFactors {
            energy: rng.random::<f64>(),
            distance: rng.random::<f64>() * shape.max_distance,
            access_rate: rng.random::<f64>() * shape.max_access,
        })
        .collect();

    events.sort_by_key(|(at, _)| *at);
    Workload { events, factors }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(clients: u32, items: u32, horizon: Ticks) -> WorkloadShape {
        WorkloadShape {
            num_clients: clients,
            num_items: items,
            horizon,
            max_distance: 100.0,
            max_access: 10.0,
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let p = WorkloadParams::default();
        let s = shape(5, 20, 50_000);
        assert_eq!(gen_workload(&p, &s, 7), gen_workload(&p, &s, 7));
        assert_ne!(
            gen_workload(&p, &s, 7).events,
            gen_workload(&p, &s, 8).events
        );
    }

    #[test]
    fn zero_query_rate_means_no_queries() {
        let p = WorkloadParams {
            query_rate: 0.0,
            ..WorkloadParams::default()
        };
        let w = gen_workload(&p, &shape(5, 20, 50_000), 1);
        assert!(!w
            .events
            .iter()
            .any(|(_, e)| matches!(e, EventKind::LocalQuery { .. })));
        assert!(w
            .events
            .iter()
            .any(|(_, e)| matches!(e, EventKind::ScheduledUpdate(_))));
    }

    #[test]
    fn events_sorted_within_horizon() {
        let w = gen_workload(&WorkloadParams::default(), &shape(10, 50, 100_000), 3);
        assert!(w.events.windows(2).all(|p| p[0].0 <= p[1].0));
        assert!(w
            .events
            .iter()
            .all(|(t, _)| t.ticks() >= 1 && t.ticks() <= 100_000));
        assert_eq!(w.factors.len(), 10);
        assert!(w.factors.iter().all(|f| f.validate().is_ok()));
    }

    #[test]
    fn no_query_while_asleep() {
        let p = WorkloadParams {
            sleep_rate: 0.5,
            ..WorkloadParams::default()
        };
        let w = gen_workload(&p, &shape(3, 10, 100_000), 11);
        for c in 1..=3 {
            let id = NodeId::client(c);
            let mut asleep = false;
            for (_, e) in &w.events {
                match e {
                    EventKind::Sleep(x) if *x == id => asleep = true,
                    EventKind::Wake(x) if *x == id => asleep = false,
                    EventKind::LocalQuery { client, .. } if *client == id => assert!(!asleep),
                    _ => {}
                }
            }
        }
    }

    #[test]
    fn uniform_popularity_when_theta_is_zero() {
        // 10^5 draws over 10 items; each share must sit within 3 sigma of 1/10.
        let p = WorkloadParams {
            query_rate: 1.0,
            zipf_theta: 0.0,
            sleep_rate: 0.0,
            update_mean: 1e12,
            ..WorkloadParams::default()
        };
        let items = 10u32;
        let w = gen_workload(&p, &shape(1, items, 200_000_000), 5);
        let mut counts = vec![0u64; items as usize];
        for (_, e) in w
            .events
            .iter()
            .filter(|(_, e)| matches!(e, EventKind::LocalQuery { .. }))
            .take(100_000)
        {
            if let EventKind::LocalQuery { item, .. } = e {
                counts[item.0 as usize] += 1;
            }
        }
        let n: u64 = counts.iter().sum();
        assert_eq!(n, 100_000);
        let p0 = 1.0 / items as f64;
        let sigma = (p0 * (1.0 - p0) / n as f64).sqrt();
        let mut chi2 = 0.0;
        for c in &counts {
            let share = *c as f64 / n as f64;
            assert!((share - p0).abs() <= 3.0 * sigma, "share {share}");
            let expect = n as f64 * p0;
            chi2 += (*c as f64 - expect).powi(2) / expect;
        }
        // 9 degrees of freedom, 0.999 quantile.
        assert!(chi2 < 27.88, "chi-square {chi2}");
    }
}
