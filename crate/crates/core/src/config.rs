//! Scenario files.
//!
//! A scenario is a TOML document. Every key is optional and falls back to the
//! default scenario (10 clients, 50 items, 100 000 ticks). Unknown keys are
//! rejected.
//!
//! ```toml
//! num_clients = 3
//! num_items = 1
//! horizon = 5000
//! strategy = "dta-multicast"          # or "ts-broadcast"
//!
//! [channel]                           # latencies in ticks
//! d_up = 5
//! d_down = 5
//! d_mc = 2
//! d_wire = 10
//! d_peer = 3
//!
//! [workload]
//! query_rate = 1.0                    # queries per second per client
//! update_mean = 2000.0                # mean ticks between updates per item
//! zipf_theta = 0.8
//! sleep_rate = 0.01                   # sleeps per second per client, 0 disables
//! sleep_mean = 5000.0                 # mean sleep length in ticks
//!
//! [avi]
//! mode = "ewma"                       # or "static"
//! alpha = 0.5
//! default_avi = 1000
//! min_avi = 1
//! static_avi = 1000
//! lapse = "renew"                     # or "await-update"
//!
//! [election]
//! mode = "normalized"                 # or "literal"
//! max_distance = 100.0
//! max_access = 10.0
//! deadline = 100
//!
//! [baseline]
//! period = 200                        # L
//! window_factor = 10                  # k, window = k * L
//!
//! [cache]
//! lru = 16                            # omit for unlimited
//!
//! [dta]
//! hot_set = [0]
//!
//! [[scripted_factors]]
//! client = 1
//! energy = 0.9
//! distance = 10.0
//! access_rate = 2.0
//!
//! [[scripted_events]]                 # replaces the generated workload
//! at = 1500
//! kind = "query"                      # query | update | sleep | wake | roam
//! client = 1
//! item = 0
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::avi::{AviMode, AviParams};
use crate::election::{CandidateFactors, ScoreBounds, ScoreMode};
use crate::model::Ticks;
use crate::node::LapsePolicy;
use crate::sim::{ChannelParams, WorkloadParams};

/// Environment variable naming a directory searched for relative scenario paths.
pub const SCENARIO_DIR_ENV: &str = "AVICAST_SCENARIO_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("invalid `{key}`: {message}")]
    Invalid { key: String, message: String },
}

impl ConfigError {
    fn invalid(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.into(),
            message: message.into(),
        }
    }
}

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    DtaMulticast,
    TsBroadcast,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::DtaMulticast => "dta-multicast",
            Strategy::TsBroadcast => "ts-broadcast",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dta-multicast" => Ok(Strategy::DtaMulticast),
            "ts-broadcast" => Ok(Strategy::TsBroadcast),
            other => Err(format!(
                "unknown strategy `{other}` (expected dta-multicast or ts-broadcast)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AviConfig {
    pub mode: AviMode,
    pub alpha: f64,
    pub default_avi: Ticks,
    pub min_avi: Ticks,
    pub static_avi: Ticks,
    pub lapse: LapsePolicy,
}

impl Default for AviConfig {
    fn default() -> Self {
        let p = AviParams::default();
        AviConfig {
            mode: p.mode,
            alpha: p.alpha,
            default_avi: p.default_avi,
            min_avi: p.min_avi,
            static_avi: p.static_avi,
            lapse: LapsePolicy::default(),
        }
    }
}

impl AviConfig {
    pub fn params(&self) -> AviParams {
        AviParams {
            mode: self.mode,
            alpha: self.alpha,
            default_avi: self.default_avi,
            min_avi: self.min_avi,
            static_avi: self.static_avi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ElectionConfig {
    pub mode: ScoreMode,
    pub max_distance: f64,
    pub max_access: f64,
    pub deadline: Ticks,
}

impl Default for ElectionConfig {
    fn default() -> Self {
        let b = ScoreBounds::default();
        ElectionConfig {
            mode: ScoreMode::default(),
            max_distance: b.max_distance,
            max_access: b.max_access,
            deadline: 100,
        }
    }
}

impl ElectionConfig {
    pub fn bounds(&self) -> ScoreBounds {
        ScoreBounds {
            max_distance: self.max_distance,
            max_access: self.max_access,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub period: Ticks,
    pub window_factor: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            period: 200,
            window_factor: 10,
        }
    }
}

impl BaselineConfig {
    pub fn window(&self) -> Ticks {
        self.period.saturating_mul(self.window_factor)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CacheConfig {
    pub lru: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DtaConfig {
    pub hot_set: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedFactors {
    pub client: u32,
    pub energy: f64,
    pub distance: f64,
    pub access_rate: f64,
}

impl ScriptedFactors {
    pub fn factors(&self) -> CandidateFactors {
        CandidateFactors {
            energy: self.energy,
            distance: self.distance,
            access_rate: self.access_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScriptedEvent {
    Query { at: u64, client: u32, item: u32 },
    Update { at: u64, item: u32 },
    Sleep { at: u64, client: u32 },
    Wake { at: u64, client: u32 },
    Roam { at: u64, client: u32 },
}

impl ScriptedEvent {
    pub fn at(&self) -> u64 {
        match self {
            ScriptedEvent::Query { at, .. }
            | ScriptedEvent::Update { at, .. }
            | ScriptedEvent::Sleep { at, .. }
            | ScriptedEvent::Wake { at, .. }
            | ScriptedEvent::Roam { at, .. } => *at,
        }
    }

    fn client(&self) -> Option<u32> {
        match self {
            ScriptedEvent::Query { client, .. }
            | ScriptedEvent::Sleep { client, .. }
            | ScriptedEvent::Wake { client, .. }
            | ScriptedEvent::Roam { client, .. } => Some(*client),
            ScriptedEvent::Update { .. } => None,
        }
    }

    fn item(&self) -> Option<u32> {
        match self {
            ScriptedEvent::Query { item, .. } | ScriptedEvent::Update { item, .. } => Some(*item),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub num_clients: u32,
    pub num_items: u32,
    pub horizon: Ticks,
    pub strategy: Strategy,
    pub channel: ChannelParams,
    pub workload: WorkloadParams,
    pub avi: AviConfig,
    pub election: ElectionConfig,
    pub baseline: BaselineConfig,
    pub cache: CacheConfig,
    pub dta: DtaConfig,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub scripted_factors: Vec<ScriptedFactors>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scripted_events: Option<Vec<ScriptedEvent>>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            num_clients: 10,
            num_items: 50,
            horizon: 100_000,
            strategy: Strategy::default(),
            channel: ChannelParams::default(),
            workload: WorkloadParams::default(),
            avi: AviConfig::default(),
            election: ElectionConfig::default(),
            baseline: BaselineConfig::default(),
            cache: CacheConfig::default(),
            dta: DtaConfig::default(),
            scripted_factors: Vec::new(),
            scripted_events: None,
        }
    }
}

fn finite_at_least(key: &str, v: f64, min: f64, strict: bool) -> Result<(), ConfigError> {
    let ok = v.is_finite() && if strict { v > min } else { v >= min };
    if ok {
        Ok(())
    } else {
        let op = if strict { ">" } else { ">=" };
        Err(ConfigError::invalid(
            key,
            format!("must be finite and {op} {min}, got {v}"),
        ))
    }
}

fn at_least_one(key: &str, v: u64) -> Result<(), ConfigError> {
    if v >= 1 {
        Ok(())
    } else {
        Err(ConfigError::invalid(key, "must be at least 1"))
    }
}

impl ScenarioConfig {
    /// Parse and validate a scenario document.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text)
            .map_err(|e| ConfigError::Parse(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let resolved = resolve_scenario_path(path);
        let text = std::fs::read_to_string(&resolved).map_err(|source| ConfigError::Io {
            path: resolved.clone(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario always serializes")
    }

    /// Canonical text of everything except the strategy; runs with equal keys
    /// are comparable.
    pub fn comparison_key(&self) -> String {
        ScenarioConfig {
            strategy: Strategy::default(),
            ..self.clone()
        }
        .to_toml()
    }

    pub fn with_strategy(&self, strategy: Strategy) -> Self {
        ScenarioConfig {
            strategy,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        at_least_one("num_clients", self.num_clients.into())?;
        at_least_one("num_items", self.num_items.into())?;
        at_least_one("horizon", self.horizon)?;

        let ch = &self.channel;
        for (key, v) in [
            ("channel.d_up", ch.d_up),
            ("channel.d_down", ch.d_down),
            ("channel.d_mc", ch.d_mc),
            ("channel.d_wire", ch.d_wire),
            ("channel.d_peer", ch.d_peer),
        ] {
            at_least_one(key, v)?;
        }

        let w = &self.workload;
        finite_at_least("workload.query_rate", w.query_rate, 0.0, false)?;
        finite_at_least("workload.update_mean", w.update_mean, 0.0, true)?;
        finite_at_least("workload.zipf_theta", w.zipf_theta, 0.0, false)?;
        finite_at_least("workload.sleep_rate", w.sleep_rate, 0.0, false)?;
        finite_at_least("workload.sleep_mean", w.sleep_mean, 0.0, true)?;

        let a = &self.avi;
        if !(a.alpha.is_finite() && a.alpha > 0.0 && a.alpha <= 1.0) {
            return Err(ConfigError::invalid(
                "avi.alpha",
                format!("must be in (0, 1], got {}", a.alpha),
            ));
        }
        at_least_one("avi.min_avi", a.min_avi)?;
        at_least_one("avi.default_avi", a.default_avi)?;
        at_least_one("avi.static_avi", a.static_avi)?;

        let e = &self.election;
        finite_at_least("election.max_distance", e.max_distance, 0.0, true)?;
        finite_at_least("election.max_access", e.max_access, 0.0, true)?;
        at_least_one("election.deadline", e.deadline)?;

        at_least_one("baseline.period", self.baseline.period)?;
        at_least_one("baseline.window_factor", self.baseline.window_factor)?;

        if self.cache.lru == Some(0) {
            return Err(ConfigError::invalid(
                "cache.lru",
                "capacity must be at least 1",
            ));
        }

        for (i, item) in self.dta.hot_set.iter().enumerate() {
            if *item >= self.num_items {
                return Err(ConfigError::invalid(
                    format!("dta.hot_set[{i}]"),
                    format!("item {item} is outside 0..{}", self.num_items),
                ));
            }
        }

        if !self.scripted_factors.is_empty() {
            let mut seen = BTreeSet::new();
            for (i, f) in self.scripted_factors.iter().enumerate() {
                let key = format!("scripted_factors[{i}]");
                if f.client == 0 || f.client > self.num_clients || !seen.insert(f.client) {
                    return Err(ConfigError::invalid(
                        format!("{key}.client"),
                        format!(
                            "client {} is out of range 1..={} or repeated",
                            f.client, self.num_clients
                        ),
                    ));
                }
                f.factors()
                    .validate()
                    .map_err(|err| ConfigError::invalid(key, err.to_string()))?;
            }
            if seen.len() as u32 != self.num_clients {
                return Err(ConfigError::invalid(
                    "scripted_factors",
                    format!(
                        "must list every client 1..={} exactly once",
                        self.num_clients
                    ),
                ));
            }
        }

        if let Some(events) = &self.scripted_events {
            let mut updates = BTreeSet::new();
            for (i, ev) in events.iter().enumerate() {
                if let Some(c) = ev.client() {
                    if c == 0 || c > self.num_clients {
                        return Err(ConfigError::invalid(
                            format!("scripted_events[{i}].client"),
                            format!("client {c} is out of range 1..={}", self.num_clients),
                        ));
                    }
                }
                if let Some(item) = ev.item() {
                    if item >= self.num_items {
                        return Err(ConfigError::invalid(
                            format!("scripted_events[{i}].item"),
                            format!("item {item} is outside 0..{}", self.num_items),
                        ));
                    }
                }
                if let ScriptedEvent::Update { at, item } = ev {
                    if *at == 0 || !updates.insert((*item, *at)) {
                        return Err(ConfigError::invalid(
                            format!("scripted_events[{i}].at"),
                            "updates to one item need distinct times after 0",
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Resolve a scenario argument: a file, a directory holding
/// `scenario.toml`, or either of those with `.toml` omitted. Relative paths
/// that do not exist are also looked up under `$AVICAST_SCENARIO_DIR`.
pub fn resolve_scenario_path(path: &Path) -> PathBuf {
    let candidates = |base: &Path| {
        vec![
            base.to_path_buf(),
            base.join("scenario.toml"),
            base.with_extension("toml"),
        ]
    };
    let mut all = candidates(path);
    if path.is_relative() {
        if let Some(dir) = std::env::var_os(SCENARIO_DIR_ENV) {
            all.extend(candidates(&Path::new(&dir).join(path)));
        }
    }
    all.into_iter()
        .find(|p| p.is_file())
        .unwrap_or_else(|| path.to_path_buf())
}
