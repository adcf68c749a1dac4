//! Python module `panel_mdp`.

use std::path::PathBuf;
use std::sync::Arc;

use panel_mdp_core::agent::{greedy_action, QNetwork as CoreQNetwork};
use panel_mdp_core::baselines::PolicyKind;
use panel_mdp_core::env::{self, apply_placement, EnvState, Item, Panel, RankingList, SlotAction};
use panel_mdp_core::harness::{self, ExperimentConfig as CoreConfig};
use panel_mdp_core::{sim, Error};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(panel_mdp, PanelMdpError, PyException);

fn to_py(e: Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PanelMdpError::new_err(e.to_string())
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| to_py(e.into()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(frozen, skip_from_py_object, module = "panel_mdp")]
#[derive(Clone)]
struct PanelSpec(env::PanelSpec);

#[pymethods]
impl PanelSpec {
    #[new]
    #[pyo3(signature = (rows, cols, allow_null = false, null_penalty = 0.0))]
    fn new(rows: usize, cols: usize, allow_null: bool, null_penalty: f64) -> PyResult<Self> {
        env::PanelSpec::new(rows, cols, allow_null, null_penalty).map(Self).map_err(to_py)
    }

    #[getter]
    fn rows(&self) -> usize {
        self.0.rows
    }

    #[getter]
    fn cols(&self) -> usize {
        self.0.cols
    }

    #[getter]
    fn allow_null(&self) -> bool {
        self.0.allow_null
    }

    #[getter]
    fn null_penalty(&self) -> f64 {
        self.0.null_penalty
    }

    #[getter]
    fn slots(&self) -> usize {
        self.0.slots()
    }

    /// Action code of `Null`; slot codes are row-major below it.
    #[getter]
    fn null_code(&self) -> usize {
        self.0.null_code()
    }

    fn __repr__(&self) -> String {
        format!(
            "PanelSpec(rows={}, cols={}, allow_null={}, null_penalty={})",
            self.0.rows,
            self.0.cols,
            if self.0.allow_null { "True" } else { "False" },
            self.0.null_penalty
        )
    }
}

/// One placement episode over a fixed ranked list.
#[pyclass(module = "panel_mdp")]
struct Environment {
    spec: env::PanelSpec,
    state: EnvState,
    panel: Panel,
}

#[pymethods]
impl Environment {
    /// `items` holds one embedding per candidate in rank order; ids default
    /// to the rank.
    #[new]
    #[pyo3(signature = (spec, items, ids = None))]
    fn new(spec: &PanelSpec, items: Vec<Vec<f64>>, ids: Option<Vec<u64>>) -> PyResult<Self> {
        let ids = ids.unwrap_or_else(|| (0..items.len() as u64).collect());
        if ids.len() != items.len() {
            return Err(PyValueError::new_err("ids and items differ in length"));
        }
        let items = ids.into_iter().zip(items).map(|(id, e)| Item::new(id, e)).collect();
        let list = RankingList::new(items).map_err(to_py)?;
        Ok(Self {
            spec: spec.0,
            state: EnvState::initial(Arc::new(list)),
            panel: Panel::empty(spec.0),
        })
    }

    /// Legal action codes at the current step.
    fn legal_actions(&self) -> Vec<usize> {
        env::legal_actions(&self.state, &self.spec)
            .iter()
            .map(|a| a.encode(&self.spec))
            .collect()
    }

    /// Applies an action code; raises on illegal actions.
    fn step(&mut self, action: usize) -> PyResult<()> {
        let action = SlotAction::decode(action, &self.spec).map_err(to_py)?;
        let item = self
            .state
            .current_item()
            .cloned()
            .ok_or_else(|| to_py(Error::EpisodeExhausted { t: self.state.t, len: self.state.t }))?;
        let next = env::transition(&self.state, action, &self.spec).map_err(to_py)?;
        if !action.is_null() {
            self.panel = apply_placement(self.panel.clone(), action, &item).map_err(to_py)?;
        }
        self.state = next;
        Ok(())
    }

    #[getter]
    fn t(&self) -> usize {
        self.state.t
    }

    #[getter]
    fn done(&self) -> bool {
        env::is_terminal(&self.state, &self.spec)
    }

    /// Action codes taken so far.
    fn history(&self) -> Vec<usize> {
        self.state.history.actions().iter().map(|a| a.encode(&self.spec)).collect()
    }

    /// Item ids by row; `None` marks an empty slot.
    fn panel(&self) -> Vec<Vec<Option<u64>>> {
        (1..=self.spec.rows)
            .map(|r| (1..=self.spec.cols).map(|c| self.panel.get(r, c).map(|i| i.id)).collect())
            .collect()
    }
}

/// A trained Q-network loaded from a checkpoint.
#[pyclass(frozen, module = "panel_mdp")]
struct QNetwork(CoreQNetwork);

#[pymethods]
impl QNetwork {
    /// `path` is a checkpoint directory or one of its files.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        harness::load_checkpoint_network(&path).map(Self).map_err(to_py)
    }

    /// Q-values for every action code, illegal ones included.
    fn q_values(&self, env: &Environment) -> PyResult<Vec<f64>> {
        self.0.q_values(&env.state).map_err(to_py)
    }

    fn value(&self, env: &Environment) -> PyResult<f64> {
        self.0.evaluate(&env.state).map(|o| o.value).map_err(to_py)
    }

    fn greedy_action(&self, env: &Environment) -> PyResult<usize> {
        greedy_action(&self.0, &env.state, &env.spec)
            .map(|a| a.encode(&env.spec))
            .map_err(to_py)
    }
}

#[pyclass(skip_from_py_object, module = "panel_mdp")]
#[derive(Clone)]
struct ExperimentConfig(CoreConfig);

#[pymethods]
impl ExperimentConfig {
    #[staticmethod]
    fn re_org() -> Self {
        Self(CoreConfig::re_org())
    }

    #[staticmethod]
    fn select_re_org() -> Self {
        Self(CoreConfig::select_re_org())
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        CoreConfig::from_toml_str(text).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        CoreConfig::load(&path).map(Self).map_err(to_py)
    }

    fn to_toml(&self) -> PyResult<String> {
        self.0.to_toml_string().map_err(to_py)
    }

    #[getter]
    fn task(&self) -> &'static str {
        self.0.task.as_str()
    }

    #[getter]
    fn get_seed(&self) -> u64 {
        self.0.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.0.seed = seed;
    }

    #[getter]
    fn get_train_episodes(&self) -> usize {
        self.0.train_episodes
    }

    #[setter]
    fn set_train_episodes(&mut self, n: usize) {
        self.0.train_episodes = n;
    }

    #[getter]
    fn get_eval_episodes(&self) -> usize {
        self.0.eval_episodes
    }

    #[setter]
    fn set_eval_episodes(&mut self, n: usize) {
        self.0.eval_episodes = n;
    }

    #[getter]
    fn panel(&self) -> PanelSpec {
        PanelSpec(self.0.panel)
    }

    fn __repr__(&self) -> String {
        format!("ExperimentConfig(task={}, seed={})", self.0.task, self.0.seed)
    }
}

/// Trains and writes all artifacts under `out`; returns a summary dict.
#[pyfunction]
fn train<'py>(py: Python<'py>, config: &ExperimentConfig, out: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let config = config.0.clone();
    let summary = py.detach(|| harness::run_training(&config, &out)).map_err(to_py)?;
    json_to_py(
        py,
        &serde_json::json!({
            "episodes": summary.episodes,
            "train_steps": summary.train_steps,
            "final_epsilon": summary.final_epsilon,
            "mean_reward_last_100": summary.mean_reward_last_100,
            "curve": summary.curve,
        }),
    )
}

/// Evaluates one policy; the per-episode breakdown is dropped.
#[pyfunction]
#[pyo3(signature = (config, policy, checkpoint = None, episodes = None))]
fn evaluate<'py>(
    py: Python<'py>,
    config: &ExperimentConfig,
    policy: &str,
    checkpoint: Option<PathBuf>,
    episodes: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let kind: PolicyKind = policy.parse().map_err(to_py)?;
    let config = config.0.clone();
    let episodes = episodes.unwrap_or(config.eval_episodes);
    let report = py
        .detach(|| harness::run_eval(&config, kind, checkpoint.as_deref(), episodes, None))
        .map_err(to_py)?;
    json_to_py(
        py,
        &serde_json::json!({
            "policy": report.policy,
            "task": report.task,
            "episodes": report.episodes,
            "average_reward": report.average_reward,
            "average_expected_reward": report.average_expected_reward,
            "auc": report.auc,
        }),
    )
}

#[pyfunction]
#[pyo3(signature = (config, checkpoint = None, episodes = None))]
fn compare<'py>(
    py: Python<'py>,
    config: &ExperimentConfig,
    checkpoint: Option<PathBuf>,
    episodes: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let config = config.0.clone();
    let episodes = episodes.unwrap_or(config.eval_episodes);
    let rows = py
        .detach(|| harness::compare(&config, checkpoint.as_deref(), episodes, None))
        .map_err(to_py)?;
    json_to_py(py, &serde_json::to_value(rows).map_err(|e| to_py(e.into()))?)
}

#[pyfunction]
fn compute_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    harness::compute_auc(&scores, &labels).map_err(to_py)
}

/// Examination weights by row for an `rows` x `cols` grid.
#[pyfunction]
fn examination_weights(rows: usize, cols: usize, row_decay: f64, middle_bias: f64) -> PyResult<Vec<Vec<f64>>> {
    sim::examination_weights(rows, cols, row_decay, middle_bias)
        .map(|g| g.to_rows())
        .map_err(to_py)
}

/// Bucketed means of a metrics CSV as a list of dicts.
#[pyfunction]
#[pyo3(signature = (metrics, bucket = 100))]
fn export_curves<'py>(py: Python<'py>, metrics: PathBuf, bucket: usize) -> PyResult<Bound<'py, PyAny>> {
    let rows = harness::load_metrics(&metrics)
        .and_then(|m| harness::export_curves(&m, bucket))
        .map_err(to_py)?;
    json_to_py(py, &serde_json::to_value(rows).map_err(|e| to_py(e.into()))?)
}

#[pymodule]
fn panel_mdp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PanelMdpError", m.py().get_type::<PanelMdpError>())?;
    m.add_class::<PanelSpec>()?;
    m.add_class::<Environment>()?;
    m.add_class::<QNetwork>()?;
    m.add_class::<ExperimentConfig>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(compute_auc, m)?)?;
    m.add_function(wrap_pyfunction!(examination_weights, m)?)?;
    m.add_function(wrap_pyfunction!(export_curves, m)?)?;
    Ok(())
}
