//! DTA candidacy scoring and selection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::NodeId;

#[derive(Debug, Error, PartialEq)]
pub enum ElectionError {
    #[error("candidate factor `{field}` is {value}, expected {expected}")]
    BadFactor {
        field: &'static str,
        value: f64,
        expected: &'static str,
    },
    #[error("score bound `{field}` must be positive and finite, got {value}")]
    BadBound { field: &'static str, value: f64 },
    #[error("no candidates")]
    NoCandidates,
    #[error("candidate {0} has a non-finite score")]
    NonFiniteScore(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateFactors {
    /// Battery fraction in [0, 1].
    pub energy: f64,
    /// Meters from the base station.
    pub distance: f64,
    /// Queries per second served recently.
    pub access_rate: f64,
}

impl CandidateFactors {
    pub fn validate(&self) -> Result<(), ElectionError> {
        let bad = |field, value, expected| ElectionError::BadFactor {
            field,
            value,
            expected,
        };
        if !(self.energy.is_finite() && (0.0..=1.0).contains(&self.energy)) {
            return Err(bad("energy", self.energy, "a finite value in [0, 1]"));
        }
        if !(self.distance.is_finite() && self.distance >= 0.0) {
            return Err(bad("distance", self.distance, "a finite value >= 0"));
        }
        if !(self.access_rate.is_finite() && self.access_rate >= 0.0) {
            return Err(bad("access_rate", self.access_rate, "a finite value >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    /// Plain mean of the three raw factors.
    Literal,
    /// Mean of energy, proximity and capped access rate, each in [0, 1].
    #[default]
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreBounds {
    pub max_distance: f64,
    pub max_access: f64,
}

impl Default for ScoreBounds {
    fn default() -> Self {
        ScoreBounds {
            max_distance: 100.0,
            max_access: 10.0,
        }
    }
}

pub fn candidate_score(
    f: &CandidateFactors,
    mode: ScoreMode,
    bounds: &ScoreBounds,
) -> Result<f64, ElectionError> {
    f.validate()?;
    match mode {
        ScoreMode::Literal => Ok((f.energy + f.distance + f.access_rate) / 3.0),
        ScoreMode::Normalized => {
            for (field, value) in [
                ("max_distance", bounds.max_distance),
                ("max_access", bounds.max_access),
            ] {
                if !(value.is_finite() && value > 0.0) {
                    return Err(ElectionError::BadBound { field, value });
                }
            }
            let proximity = 1.0 - (f.distance / bounds.max_distance).min(1.0);
            let access = (f.access_rate / bounds.max_access).min(1.0);
            Ok((f.energy + proximity + access) / 3.0)
        }
    }
}

/// Pick the highest-scoring candidate and the runner-up. Ties go to the
/// lowest node id, so the result does not depend on input order.
pub fn select_dta<I>(scores: I) -> Result<(NodeId, Option<NodeId>), ElectionError>
where
    I: IntoIterator<Item = (NodeId, f64)>,
{
    let mut best: Option<(NodeId, f64)> = None;
    let mut second: Option<(NodeId, f64)> = None;
    let beats = |a: (NodeId, f64), b: Option<(NodeId, f64)>| match b {
        None => true,
        Some(b) => a.1 > b.1 || (a.1 == b.1 && a.0 < b.0),
    };
    for (id, score) in scores {
        if !score.is_finite() {
            return Err(ElectionError::NonFiniteScore(id));
        }
        let cand = (id, score);
        if best.is_some_and(|b| b.0 == id) || second.is_some_and(|s| s.0 == id) {
            continue;
        }
        if beats(cand, best) {
            second = best;
            best = Some(cand);
        } else if beats(cand, second) {
            second = Some(cand);
        }
    }
    let (dta, _) = best.ok_or(ElectionError::NoCandidates)?;
    Ok((dta, second.map(|s| s.0)))
}
