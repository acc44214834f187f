//! Absolute validity intervals: validity checks, estimation from update
//! history, the invalidation-report emission rule, and false-valid /
//! false-invalid accounting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CacheEntry, ItemId, SimTime, Ticks};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AviError {
    #[error("update for item {item} at t={at} does not follow previous update at t={previous}")]
    NonIncreasingUpdate {
        item: ItemId,
        at: SimTime,
        previous: SimTime,
    },
    #[error("update times must be strictly increasing (index {index})")]
    UnorderedTrace { index: usize },
    #[error("expected {expected} AVI values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("horizon t={horizon} precedes last update t={last}")]
    HorizonBeforeLastUpdate { horizon: SimTime, last: SimTime },
}

/// A copy is valid strictly before `last_update_ts + avi`.
pub fn is_valid(entry: &CacheEntry, now: SimTime) -> bool {
    entry.item.expires_at() > now
}

/// Invalidation reports go out only when an item's AVI shrinks.
pub fn should_emit_ir(old_avi: Ticks, new_avi: Ticks) -> bool {
    new_avi < old_avi
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AviMode {
    /// Exponentially weighted moving average of inter-update intervals.
    #[default]
    Ewma,
    /// A fixed AVI for every item.
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AviParams {
    pub mode: AviMode,
    pub alpha: f64,
    pub default_avi: Ticks,
    pub min_avi: Ticks,
    pub static_avi: Ticks,
}

impl Default for AviParams {
    fn default() -> Self {
        AviParams {
            mode: AviMode::Ewma,
            alpha: 0.5,
            default_avi: 1000,
            min_avi: 1,
            static_avi: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ItemHistory {
    last_update_ts: SimTime,
    smoothed_interval: Option<f64>,
    avi: Ticks,
}

/// Result of feeding one update into the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub old_avi: Option<Ticks>,
    pub new_avi: Ticks,
}

impl Observation {
    pub fn is_reduction(&self) -> bool {
        self.old_avi
            .is_some_and(|old| should_emit_ir(old, self.new_avi))
    }
}

/// Per-item AVI estimator state.
#[derive(Debug, Clone, PartialEq)]
pub struct AviEstimator {
    params: AviParams,
    items: BTreeMap<ItemId, ItemHistory>,
}

fn round_half_up(x: f64) -> Ticks {
    (x + 0.5).floor() as Ticks
}

impl AviEstimator {
    pub fn new(params: AviParams) -> Self {
        AviEstimator {
            params,
            items: BTreeMap::new(),
        }
    }

    pub fn params(&self) -> &AviParams {
        &self.params
    }

    /// Current estimate for `item`, or the no-history value.
    pub fn avi(&self, item: ItemId) -> Ticks {
        self.items
            .get(&item)
            .map_or_else(|| self.first_avi(), |h| h.avi)
    }

    pub fn last_update(&self, item: ItemId) -> Option<SimTime> {
        self.items.get(&item).map(|h| h.last_update_ts)
    }

    pub fn smoothed_interval(&self, item: ItemId) -> Option<f64> {
        self.items.get(&item).and_then(|h| h.smoothed_interval)
    }

    fn first_avi(&self) -> Ticks {
        let raw = match self.params.mode {
            AviMode::Ewma => self.params.default_avi,
            AviMode::Static => self.params.static_avi,
        };
        raw.max(self.params.min_avi)
    }

    /// Record an update of `item` at `t` and return the old and new AVI.
    pub fn observe(&mut self, item: ItemId, t: SimTime) -> Result<Observation, AviError> {
        let min_avi = self.params.min_avi;
        let first = self.first_avi();
        let Some(hist) = self.items.get_mut(&item) else {
            self.items.insert(
                item,
                ItemHistory {
                    last_update_ts: t,
                    smoothed_interval: None,
                    avi: first,
                },
            );
            return Ok(Observation {
                old_avi: None,
                new_avi: first,
            });
        };
        if t <= hist.last_update_ts {
            return Err(AviError::NonIncreasingUpdate {
                item,
                at: t,
                previous: hist.last_update_ts,
            });
        }
        let interval = (t - hist.last_update_ts) as f64;
        let smoothed = match hist.smoothed_interval {
            None => interval,
            Some(prev) => self.params.alpha * interval + (1.0 - self.params.alpha) * prev,
        };
        let old = hist.avi;
        let new_avi = match self.params.mode {
            AviMode::Ewma => round_half_up(smoothed).max(min_avi),
            AviMode::Static => first,
        };
        hist.last_update_ts = t;
        hist.smoothed_interval = Some(smoothed);
        hist.avi = new_avi;
        Ok(Observation {
            old_avi: Some(old),
            new_avi,
        })
    }
}

/// Functional form of [`AviEstimator::observe`].
pub fn observe_update(
    mut state: AviEstimator,
    item: ItemId,
    t: SimTime,
) -> Result<(AviEstimator, Ticks), AviError> {
    let obs = state.observe(item, t)?;
    Ok((state, obs.new_avi))
}

/// Strictly increasing update times for one item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateTrace(Vec<SimTime>);

impl UpdateTrace {
    pub fn new(times: Vec<SimTime>) -> Result<Self, AviError> {
        if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(AviError::UnorderedTrace { index: i + 1 });
        }
        Ok(UpdateTrace(times))
    }

    pub fn times(&self) -> &[SimTime] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Total false-valid and false-invalid time for a trace.
///
/// Update `k` is truly valid on `[t_k, t_{k+1})` and AVI-valid on
/// `[t_k, t_k + avi_k)`; their symmetric difference splits into the false
/// valid part (AVI too long) and the false invalid part (AVI too short).
/// The last update's windows end at `horizon`.
pub fn fvp_fip(
    trace: &UpdateTrace,
    avi_at_update: &[Ticks],
    horizon: SimTime,
) -> Result<(Ticks, Ticks), AviError> {
    let times = trace.times();
    if avi_at_update.len() != times.len() {
        return Err(AviError::LengthMismatch {
            expected: times.len(),
            got: avi_at_update.len(),
        });
    }
    if let Some(&last) = times.last() {
        if horizon < last {
            return Err(AviError::HorizonBeforeLastUpdate { horizon, last });
        }
    }
    let mut fvp = 0;
    let mut fip = 0;
    for (k, (&start, &avi)) in times.iter().zip(avi_at_update).enumerate() {
        let (true_end, avi_end) = match times.get(k + 1) {
            Some(&next) => (next, start + avi),
            None => (horizon, (start + avi).min(horizon)),
        };
        fvp += avi_end.since(true_end);
        fip += true_end.since(avi_end);
    }
    Ok((fvp, fip))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DataItem;
    use proptest::prelude::*;

    fn entry(ts: u64, avi: u64) -> CacheEntry {
        CacheEntry::new(
            DataItem {
                id: ItemId(0),
                version: 0,
                last_update_ts: SimTime(ts),
                avi,
            },
            SimTime(ts),
        )
    }

    /// Tick-by-tick replay: for every update, walk each tick of the union of
    /// its true and AVI windows and classify disagreements.
    pub(crate) fn brute_force_fvp_fip(times: &[u64], avis: &[u64], horizon: u64) -> (u64, u64) {
        let mut fvp = 0;
        let mut fip = 0;
        for k in 0..times.len() {
            let start = times[k];
            let last = k + 1 == times.len();
            let next = if last { horizon } else { times[k + 1] };
            let avi_end = start + avis[k];
            let stop = if last { horizon } else { next.max(avi_end) };
            for tick in start..stop {
                let truly_valid = tick < next;
                let avi_valid = tick < avi_end;
                match (truly_valid, avi_valid) {
                    (false, true) => fvp += 1,
                    (true, false) => fip += 1,
                    _ => {}
                }
            }
        }
        (fvp, fip)
    }

    #[test]
    fn validity_examples() {
        assert!(is_valid(&entry(100, 50), SimTime(120)));
        assert!(!is_valid(&entry(100, 50), SimTime(150)));
        assert!(!is_valid(&entry(100, 50), SimTime(200)));
    }

    #[test]
    fn ir_rule_examples() {
        assert!(should_emit_ir(20, 10));
        assert!(!should_emit_ir(10, 20));
        assert!(!should_emit_ir(10, 10));
    }

    fn feed(intervals: &[u64], alpha: f64) -> (AviEstimator, Vec<Ticks>) {
        let mut est = AviEstimator::new(AviParams {
            alpha,
            ..AviParams::default()
        });
        let mut t = 0;
        let mut avis = vec![est.observe(ItemId(0), SimTime(t)).unwrap().new_avi];
        for &dt in intervals {
            t += dt;
            avis.push(est.observe(ItemId(0), SimTime(t)).unwrap().new_avi);
        }
        (est, avis)
    }

    #[test]
    fn first_observation_uses_default() {
        let (_, avis) = feed(&[], 0.5);
        assert_eq!(avis, vec![1000]);
    }

    #[test]
    fn constant_intervals_are_a_fixed_point() {
        let (_, avis) = feed(&[10, 10, 10], 0.5);
        assert_eq!(avis[3], 10);
    }

    #[test]
    fn ewma_matches_hand_computed_recurrence() {
        // 8 | 0.5*12 + 0.5*8 = 10 | 0.5*16 + 0.5*10 = 13
        let (est, avis) = feed(&[8, 12, 16], 0.5);
        assert_eq!(&avis[1..], &[8, 10, 13]);
        assert_eq!(est.smoothed_interval(ItemId(0)), Some(13.0));
    }

    #[test]
    fn rounding_is_half_up_and_floored_at_min() {
        // 0.5*3 + 0.5*2 = 2.5 -> 3
        let (_, avis) = feed(&[2, 3], 0.5);
        assert_eq!(avis[2], 3);
        let mut est = AviEstimator::new(AviParams {
            min_avi: 5,
            ..AviParams::default()
        });
        est.observe(ItemId(1), SimTime(0)).unwrap();
        assert_eq!(est.observe(ItemId(1), SimTime(1)).unwrap().new_avi, 5);
    }

    #[test]
    fn non_increasing_update_is_rejected() {
        let mut est = AviEstimator::new(AviParams::default());
        est.observe(ItemId(0), SimTime(10)).unwrap();
        assert!(matches!(
            est.observe(ItemId(0), SimTime(10)),
            Err(AviError::NonIncreasingUpdate { .. })
        ));
    }

    #[test]
    fn static_mode_never_reduces() {
        let mut est = AviEstimator::new(AviParams {
            mode: AviMode::Static,
            static_avi: 40,
            ..AviParams::default()
        });
        for t in [0, 3, 500, 501] {
            let obs = est.observe(ItemId(0), SimTime(t)).unwrap();
            assert_eq!(obs.new_avi, 40);
            assert!(!obs.is_reduction());
        }
    }

    #[test]
    fn fvp_fip_examples() {
        let trace = UpdateTrace::new(vec![SimTime(0), SimTime(100)]).unwrap();
        assert_eq!(fvp_fip(&trace, &[120, 0], SimTime(100)).unwrap(), (20, 0));
        assert_eq!(fvp_fip(&trace, &[80, 0], SimTime(100)).unwrap(), (0, 20));
        assert!(matches!(
            fvp_fip(&trace, &[80], SimTime(100)),
            Err(AviError::LengthMismatch { .. })
        ));
        assert!(UpdateTrace::new(vec![SimTime(5), SimTime(5)]).is_err());
    }

    #[test]
    fn brute_force_oracle_agrees_on_examples() {
        assert_eq!(brute_force_fvp_fip(&[0, 100], &[120, 0], 100), (20, 0));
        assert_eq!(brute_force_fvp_fip(&[0, 100], &[80, 0], 100), (0, 20));
    }

    fn random_trace() -> impl Strategy<Value = (Vec<u64>, Vec<u64>, u64)> {
        (1usize..=20)
            .prop_flat_map(|n| {
                (
                    proptest::collection::vec(1u64..60, n),
                    proptest::collection::vec(0u64..120, n),
                    0u64..50,
                )
            })
            .prop_map(|(gaps, avis, tail)| {
                let mut t = 0;
                let times = gaps
                    .iter()
                    .enumerate()
                    .map(|(i, g)| {
                        if i > 0 {
                            t += g;
                        }
                        t
                    })
                    .collect::<Vec<_>>();
                let horizon = t + tail;
                (times, avis, horizon)
            })
    }

    proptest! {
        #[test]
        fn closed_form_matches_tick_replay((times, avis, horizon) in random_trace()) {
            let trace = UpdateTrace::new(times.iter().copied().map(SimTime).collect()).unwrap();
            let got = fvp_fip(&trace, &avis, SimTime(horizon)).unwrap();
            prop_assert_eq!(got, brute_force_fvp_fip(&times, &avis, horizon));
        }

        #[test]
        fn validity_is_monotone_in_time(ts in 0u64..1000, avi in 0u64..1000, a in 0u64..3000, b in 0u64..3000) {
            let (early, late) = (a.min(b), a.max(b));
            let e = entry(ts, avi);
            if !is_valid(&e, SimTime(early)) {
                prop_assert!(!is_valid(&e, SimTime(late)));
            }
        }

        #[test]
        fn fresh_estimate_is_valid_inside_window(
            intervals in proptest::collection::vec(1u64..500, 0..10),
            probe in 0u64..2000,
        ) {
            let (est, avis) = feed(&intervals, 0.5);
            let t = est.last_update(ItemId(0)).unwrap();
            let avi = *avis.last().unwrap();
            prop_assert!(avi >= 1);
            let e = CacheEntry::new(
                DataItem { id: ItemId(0), version: 0, last_update_ts: t, avi },
                t,
            );
            let now = t + probe;
            prop_assert_eq!(is_valid(&e, now), probe < avi);
        }

        #[test]
        fn reduction_is_transitive(a in 0u64..100, b in 0u64..100, c in 0u64..100) {
            if should_emit_ir(a, b) && should_emit_ir(b, c) {
                prop_assert!(should_emit_ir(a, c));
            }
        }
    }
}
