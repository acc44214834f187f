//! Python bindings: the `avicast` module.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use avicast::avi::{self, AviEstimator, AviMode, AviParams, UpdateTrace};
use avicast::config::{ScenarioConfig, Strategy};
use avicast::election::{self, CandidateFactors, ScoreBounds, ScoreMode};
use avicast::metrics::{metrics_csv, Metrics};
use avicast::model::{CacheEntry, DataItem, ItemId, NodeId, SimTime};
use avicast::runner;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_strategy(s: &str) -> PyResult<Strategy> {
    s.parse().map_err(value_err)
}

/// True when a copy stamped `ts` with interval `avi` is still valid at `now`.
#[pyfunction]
fn is_valid(ts: u64, avi: u64, now: u64) -> bool {
    let item = DataItem {
        id: ItemId(0),
        version: 0,
        last_update_ts: SimTime(ts),
        avi,
    };
    avi::is_valid(&CacheEntry::new(item, SimTime(ts)), SimTime(now))
}

#[pyfunction]
fn should_emit_ir(old_avi: u64, new_avi: u64) -> bool {
    avi::should_emit_ir(old_avi, new_avi)
}

#[pyfunction]
#[pyo3(signature = (energy, distance, access_rate, mode = "normalized", max_distance = 100.0, max_access = 10.0))]
fn candidate_score(
    energy: f64,
    distance: f64,
    access_rate: f64,
    mode: &str,
    max_distance: f64,
    max_access: f64,
) -> PyResult<f64> {
    let mode = match mode {
        "normalized" => ScoreMode::Normalized,
        "literal" => ScoreMode::Literal,
        other => return Err(value_err(format!("unknown score mode `{other}`"))),
    };
    let factors = CandidateFactors {
        energy,
        distance,
        access_rate,
    };
    let bounds = ScoreBounds {
        max_distance,
        max_access,
    };
    election::candidate_score(&factors, mode, &bounds).map_err(value_err)
}

/// Pick the DTA and successor from `{client_index: score}`.
#[pyfunction]
fn select_dta(scores: Vec<(u32, f64)>) -> PyResult<(u32, Option<u32>)> {
    let (dta, successor) =
        election::select_dta(scores.into_iter().map(|(i, s)| (NodeId::client(i), s)))
            .map_err(value_err)?;
    Ok((dta.index, successor.map(|n| n.index)))
}

/// False-valid and false-invalid ticks for an update history.
#[pyfunction]
fn fvp_fip(times: Vec<u64>, avis: Vec<u64>, horizon: u64) -> PyResult<(u64, u64)> {
    let trace = UpdateTrace::new(times.into_iter().map(SimTime).collect()).map_err(value_err)?;
    avi::fvp_fip(&trace, &avis, SimTime(horizon)).map_err(value_err)
}

#[pyclass(name = "AviEstimator")]
struct PyAviEstimator(AviEstimator);

#[pymethods]
impl PyAviEstimator {
    #[new]
    #[pyo3(signature = (alpha = 0.5, default_avi = 1000, min_avi = 1, static_avi = None))]
    fn new(alpha: f64, default_avi: u64, min_avi: u64, static_avi: Option<u64>) -> Self {
        let params = AviParams {
            mode: if static_avi.is_some() {
                AviMode::Static
            } else {
                AviMode::Ewma
            },
            alpha,
            default_avi,
            min_avi,
            static_avi: static_avi.unwrap_or(default_avi),
        };
        PyAviEstimator(AviEstimator::new(params))
    }

    /// Record an update; returns `(old_avi, new_avi, emits_ir)`.
    fn observe(&mut self, item: u32, t: u64) -> PyResult<(Option<u64>, u64, bool)> {
        let obs = self
            .0
            .observe(ItemId(item), SimTime(t))
            .map_err(value_err)?;
        Ok((obs.old_avi, obs.new_avi, obs.is_reduction()))
    }

    fn avi(&self, item: u32) -> u64 {
        self.0.avi(ItemId(item))
    }
}

fn metrics_dict<'py>(py: Python<'py>, m: &Metrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (name, value) in m.columns() {
        d.set_item(name, value)?;
    }
    Ok(d)
}

#[pyclass(name = "RunResult")]
struct PyRunResult {
    seed: u64,
    strategy: Strategy,
    output: avicast::RunOutput,
    violations: Vec<String>,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn trace(&self) -> String {
        self.output.trace.render()
    }

    #[getter]
    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        metrics_dict(py, &self.output.metrics)
    }

    #[getter]
    fn violations(&self) -> Vec<String> {
        self.violations.clone()
    }

    fn metrics_csv(&self) -> String {
        metrics_csv(&[(self.seed, self.strategy, &self.output.metrics)])
    }
}

#[pyclass(name = "Scenario")]
struct PyScenario(ScenarioConfig);

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn default() -> Self {
        PyScenario(ScenarioConfig::default())
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        ScenarioConfig::from_toml(text)
            .map(PyScenario)
            .map_err(value_err)
    }

    /// Load a file or scenario directory, also searching `$AVICAST_SCENARIO_DIR`.
    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        ScenarioConfig::load(&path)
            .map(PyScenario)
            .map_err(value_err)
    }

    fn to_toml(&self) -> String {
        self.0.to_toml()
    }

    #[getter]
    fn strategy(&self) -> &'static str {
        self.0.strategy.as_str()
    }

    #[getter]
    fn num_clients(&self) -> u32 {
        self.0.num_clients
    }

    fn with_strategy(&self, strategy: &str) -> PyResult<Self> {
        Ok(PyScenario(self.0.with_strategy(parse_strategy(strategy)?)))
    }

    fn run(&self, py: Python<'_>, seed: u64) -> PyResult<PyRunResult> {
        let cfg = self.0.clone();
        let run = py
            .detach(|| runner::run_checked(&cfg, seed))
            .map_err(value_err)?;
        Ok(PyRunResult {
            seed,
            strategy: cfg.strategy,
            output: run.output,
            violations: run.violations.iter().map(ToString::to_string).collect(),
        })
    }

    /// Run both strategies over `seeds`; returns the rendered comparison table.
    fn compare(&self, py: Python<'_>, seeds: Vec<u64>) -> PyResult<String> {
        let cfg = self.0.clone();
        let result = py
            .detach(|| runner::compare_strategies(&cfg, &seeds))
            .map_err(value_err)?;
        if let Some((s, seed, v)) = result.violations.first() {
            return Err(value_err(format!("{} seed {seed}: {v}", s.as_str())));
        }
        Ok(result.comparison.render())
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(clients={}, items={}, horizon={}, strategy={})",
            self.0.num_clients,
            self.0.num_items,
            self.0.horizon,
            self.0.strategy.as_str()
        )
    }
}

#[pymodule]
#[pyo3(name = "avicast")]
fn avicast_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(is_valid, m)?)?;
    m.add_function(wrap_pyfunction!(should_emit_ir, m)?)?;
    m.add_function(wrap_pyfunction!(candidate_score, m)?)?;
    m.add_function(wrap_pyfunction!(select_dta, m)?)?;
    m.add_function(wrap_pyfunction!(fvp_fip, m)?)?;
    m.add_class::<PyAviEstimator>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRunResult>()?;
    Ok(())
}
