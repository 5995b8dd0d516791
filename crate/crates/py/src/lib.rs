//! Python bindings: configs, ingestion, training runs, and the scalar
//! building blocks (schedules, metrics, privacy bounds).

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use fedrap::config::ExperimentConfig;
use fedrap::curriculum::{ScheduleKind, ScheduleSpec};
use fedrap::data::{PreparedData, RawInteraction};
use fedrap::eval::{self, RankingCase};
use fedrap::experiment;
use fedrap::privacy::{self, PrivacyConfig};
use fedrap::runtime::{evaluate_clients, TrainingOutcome};

fn py_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Python object to JSON by way of the stdlib encoder.
fn to_json(obj: &Bound<'_, PyAny>) -> PyResult<serde_json::Value> {
    let json = obj.py().import("json")?;
    let text: String = json.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(py_err)
}

fn from_json<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(py_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    /// Defaults overridden by keyword arguments named like the config keys.
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut value = serde_json::to_value(ExperimentConfig::default()).map_err(py_err)?;
        if let Some(kwargs) = kwargs {
            let overrides = to_json(kwargs.as_any())?;
            if let (Some(base), Some(extra)) = (value.as_object_mut(), overrides.as_object()) {
                for (k, v) in extra {
                    base.insert(k.clone(), v.clone());
                }
            }
        }
        let inner = serde_json::from_value(value).map_err(py_err)?;
        Ok(PyConfig { inner })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        ExperimentConfig::from_toml(text)
            .map(|inner| PyConfig { inner })
            .map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ExperimentConfig::load(&path)
            .map(|inner| PyConfig { inner })
            .map_err(py_err)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        from_json(py, &self.inner)
    }

    fn config_hash(&self) -> String {
        self.inner.config_hash()
    }

    fn label(&self) -> String {
        self.inner.variant_spec().label()
    }

    fn __repr__(&self) -> String {
        format!("Config({})", serde_json::to_string(&self.inner).unwrap_or_default())
    }
}

#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: PreparedData,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(config: &PyConfig) -> PyResult<Self> {
        experiment::load_data(&config.inner)
            .map(|inner| PyDataset { inner })
            .map_err(py_err)
    }

    /// Builds a dataset from `(user, item, rating, timestamp)` tuples.
    #[staticmethod]
    #[pyo3(signature = (rows, min_interactions = 10, eval_negatives = 99, seed = 0))]
    fn from_interactions(
        rows: Vec<(String, String, f64, Option<i64>)>,
        min_interactions: usize,
        eval_negatives: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let raw: Vec<RawInteraction> = rows
            .into_iter()
            .map(|(user_id, item_id, rating, timestamp)| RawInteraction {
                user_id,
                item_id,
                rating,
                timestamp,
            })
            .collect();
        PreparedData::from_interactions(&raw, min_interactions, eval_negatives, seed)
            .map(|inner| PyDataset { inner })
            .map_err(py_err)
    }

    #[getter]
    fn n_users(&self) -> usize {
        self.inner.meta.n()
    }

    #[getter]
    fn n_items(&self) -> usize {
        self.inner.meta.m()
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        from_json(py, &self.inner.stats())
    }

    fn user_ids(&self) -> Vec<String> {
        self.inner.meta.user_ids.clone()
    }

    fn item_ids(&self) -> Vec<String> {
        self.inner.meta.item_ids.clone()
    }

    fn client<'py>(&self, py: Python<'py>, index: usize) -> PyResult<Bound<'py, PyDict>> {
        let c = self
            .inner
            .clients
            .get(index)
            .ok_or_else(|| py_err(format!("no client {index}")))?;
        let d = PyDict::new(py);
        d.set_item("client_id", c.client_id)?;
        d.set_item("train_positives", c.train_positives.clone())?;
        d.set_item("test_positive", c.test_positive)?;
        d.set_item("eval_negatives", c.eval_negatives.clone())?;
        Ok(d)
    }
}

#[pyclass(name = "TrainedRun")]
struct PyTrainedRun {
    outcome: TrainingOutcome,
    summary: experiment::RunSummary,
}

#[pymethods]
impl PyTrainedRun {
    #[getter]
    fn reports<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
        let items = self
            .outcome
            .reports
            .iter()
            .map(|r| from_json(py, r))
            .collect::<PyResult<Vec<_>>>()?;
        PyList::new(py, items)
    }

    #[getter]
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        from_json(py, &self.summary)
    }

    fn global_table(&self) -> Vec<Vec<f64>> {
        let c = &self.outcome.server.c;
        (0..c.rows()).map(|r| c.row(r).to_vec()).collect()
    }

    fn user_embedding(&self, client: usize) -> PyResult<Vec<f64>> {
        self.client(client).map(|c| c.u.clone())
    }

    /// `None` for variants without local tables.
    fn local_table(&self, client: usize) -> PyResult<Option<Vec<Vec<f64>>>> {
        let c = self.client(client)?;
        Ok(c.d.as_ref().map(|d| (0..d.rows()).map(|r| d.row(r).to_vec()).collect()))
    }

    fn score(&self, client: usize, item: usize) -> PyResult<f64> {
        let c = self.client(client)?;
        if item >= c.dataset.n_items() {
            return Err(py_err(format!("no item {item}")));
        }
        Ok(c.score(&self.outcome.server.c, item))
    }

    /// HR@10 / NDCG@10 of every client against the final global table.
    fn evaluate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let s = evaluate_clients(&self.outcome.clients, &self.outcome.server.c, eval::DEFAULT_CUTOFF)
            .map_err(py_err)?;
        from_json(py, &s)
    }
}

impl PyTrainedRun {
    fn client(&self, i: usize) -> PyResult<&fedrap::runtime::ClientState> {
        self.outcome
            .clients
            .get(i)
            .ok_or_else(|| py_err(format!("no client {i}")))
    }
}

/// Trains on `dataset`; with `out` set, writes the run directory as the CLI does.
#[pyfunction]
#[pyo3(signature = (config, dataset, out = None))]
fn train(py: Python<'_>, config: &PyConfig, dataset: &PyDataset, out: Option<PathBuf>) -> PyResult<PyTrainedRun> {
    let cfg = config.inner.clone();
    let data = &dataset.inner;
    let (outcome, summary) = py
        .detach(|| experiment::run(&cfg, data, out.as_deref()))
        .map_err(py_err)?;
    Ok(PyTrainedRun { outcome, summary })
}

#[pyfunction]
fn schedule_weight(kind: &str, v: f64, round: u64) -> PyResult<f64> {
    let kind: ScheduleKind = kind.parse().map_err(py_err)?;
    Ok(ScheduleSpec::new(kind, v).weight(round))
}

#[pyfunction]
#[pyo3(signature = (scores, positive_position = 0))]
fn rank_position(scores: Vec<f64>, positive_position: usize) -> PyResult<usize> {
    eval::rank_position(&RankingCase {
        scores,
        positive_position,
    })
    .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (rank, k = 10))]
fn hr_at_k(rank: usize, k: usize) -> f64 {
    eval::hr_at_k(rank, k)
}

#[pyfunction]
#[pyo3(signature = (rank, k = 10))]
fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    eval::ndcg_at_k(rank, k)
}

#[pyfunction]
fn shrink(value: f64, theta: f64) -> f64 {
    fedrap::model::shrink(value, theta)
}

#[pyfunction]
fn sensitivity_bound(eta: f64, tau: f64, n_s: usize) -> f64 {
    privacy::sensitivity_bound(eta, tau, n_s)
}

#[pyfunction]
fn noise_sigma(eta: f64, tau: f64, z: f64, n_s: usize) -> f64 {
    PrivacyConfig::enabled(tau, z).noise_sigma(eta, n_s)
}

#[pymodule]
fn fedrap_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyTrainedRun>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(schedule_weight, m)?)?;
    m.add_function(wrap_pyfunction!(rank_position, m)?)?;
    m.add_function(wrap_pyfunction!(hr_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(shrink, m)?)?;
    m.add_function(wrap_pyfunction!(sensitivity_bound, m)?)?;
    m.add_function(wrap_pyfunction!(noise_sigma, m)?)?;
    Ok(())
}
