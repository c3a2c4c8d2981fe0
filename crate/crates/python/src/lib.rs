//! Python bindings: cells, generation, training, tables, the NAS environment,
//! optimizers and analytics.

use std::path::Path;
use std::sync::Arc;

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

use recur_nas_core::analytics;
use recur_nas_core::bench_table;
use recur_nas_core::cell_graph;
use recur_nas_core::corpus::Corpus;
use recur_nas_core::generator::{self, GenParams};
use recur_nas_core::lm_trainer::{self, TrainConfig};
use recur_nas_core::nas_env;
use recur_nas_core::optimizers::{self, Method, OptimizerParams, TableFeatures};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Converts any serializable value to native Python objects via JSON.
fn to_py(py: Python<'_>, value: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

#[pyclass(module = "recur_nas", name = "CellSpec", from_py_object)]
#[derive(Clone)]
struct PyCellSpec {
    inner: cell_graph::CellSpec,
}

#[pymethods]
impl PyCellSpec {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        cell_graph::CellSpec::from_json(text)
            .map(|inner| PyCellSpec { inner })
            .map_err(err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn canonical_hash(&self) -> PyResult<String> {
        self.inner.canonical_hash().map_err(err)
    }

    fn is_valid(&self) -> bool {
        self.inner.is_valid()
    }

    /// List of `(rule, message)` violations; empty when valid.
    fn validate(&self) -> Vec<(String, String)> {
        self.inner
            .validate()
            .violations
            .iter()
            .map(|v| (v.rule.as_str().to_string(), v.message.clone()))
            .collect()
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.nodes.len()
    }

    #[getter]
    fn hidden_slots(&self) -> usize {
        self.inner.hidden_slots()
    }

    fn __repr__(&self) -> String {
        format!(
            "CellSpec(nodes={}, hidden_slots={})",
            self.inner.nodes.len(),
            self.inner.hidden_slots()
        )
    }
}

#[pyfunction]
fn build_rnn() -> PyCellSpec {
    PyCellSpec {
        inner: cell_graph::build_rnn(),
    }
}

#[pyfunction]
fn build_lstm() -> PyCellSpec {
    PyCellSpec {
        inner: cell_graph::build_lstm(),
    }
}

#[pyfunction]
fn build_gru() -> PyCellSpec {
    PyCellSpec {
        inner: cell_graph::build_gru(),
    }
}

#[pyfunction]
#[pyo3(signature = (seed, max_nodes = 24, hidden_slots = 2))]
fn generate(seed: u64, max_nodes: usize, hidden_slots: usize) -> PyResult<PyCellSpec> {
    generator::generate(&GenParams::new(max_nodes, hidden_slots, seed))
        .map(|inner| PyCellSpec { inner })
        .map_err(err)
}

/// Returns `(child, changed)`.
#[pyfunction]
fn mutate(spec: &PyCellSpec, seed: u64) -> (PyCellSpec, bool) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let m = generator::mutate(&spec.inner, &mut rng);
    (PyCellSpec { inner: m.spec }, m.changed)
}

#[pyfunction]
#[pyo3(signature = (spec, dim = 10))]
fn embed(spec: &PyCellSpec, dim: usize) -> PyResult<Vec<f64>> {
    analytics::embed(&spec.inner, dim).map(|f| f.vector).map_err(err)
}

#[pyfunction]
fn ged_upper_bound(a: &PyCellSpec, b: &PyCellSpec) -> usize {
    analytics::ged_upper_bound(&a.inner, &b.inner).upper_bound
}

#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> PyResult<Option<f64>> {
    if x.len() != y.len() {
        return Err(err("inputs differ in length"));
    }
    Ok(analytics::spearman(&x, &y))
}

#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<Option<f64>> {
    if x.len() != y.len() {
        return Err(err("inputs differ in length"));
    }
    Ok(analytics::pearson(&x, &y))
}

fn parse_config(config_json: Option<&str>) -> PyResult<TrainConfig> {
    match config_json {
        Some(text) => serde_json::from_str(text).map_err(err),
        None => Ok(TrainConfig::default()),
    }
}

fn load_corpus(corpus: Option<&str>, truncate: Option<(usize, usize, usize)>) -> PyResult<Corpus> {
    let mut c = match corpus {
        None | Some("bundled") => Corpus::bundled(),
        Some(dir) => Corpus::load(Path::new(dir), Default::default()).map_err(err)?,
    };
    if let Some((a, b, t)) = truncate {
        c = c.truncated(a, b, t);
    }
    Ok(c)
}

/// Trains `spec` on the bundled corpus (or a corpus directory) and returns
/// the training record as a dict. `config_json` holds training-config overrides.
#[pyfunction]
#[pyo3(signature = (spec, config_json = None, corpus = None, truncate = None))]
fn train(
    py: Python<'_>,
    spec: &PyCellSpec,
    config_json: Option<&str>,
    corpus: Option<&str>,
    truncate: Option<(usize, usize, usize)>,
) -> PyResult<Py<PyAny>> {
    let cfg = parse_config(config_json)?;
    let c = load_corpus(corpus, truncate)?;
    let record = py.detach(|| lm_trainer::train(&spec.inner, &c, &cfg)).map_err(err)?;
    to_py(py, &record)
}

#[pyclass(module = "recur_nas", name = "BenchTable", frozen)]
struct PyBenchTable {
    inner: Arc<bench_table::BenchTable>,
}

#[pymethods]
impl PyBenchTable {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        bench_table::BenchTable::load(Path::new(path))
            .map(|t| PyBenchTable { inner: Arc::new(t) })
            .map_err(err)
    }

    /// Trains every spec and writes (or resumes) the table at `path`.
    #[staticmethod]
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (specs, path, config_json = None, seeds = vec![0], corpus = None, truncate = None, jobs = 1))]
    fn build(
        py: Python<'_>,
        specs: Vec<PyCellSpec>,
        path: &str,
        config_json: Option<&str>,
        seeds: Vec<u64>,
        corpus: Option<&str>,
        truncate: Option<(usize, usize, usize)>,
        jobs: usize,
    ) -> PyResult<Self> {
        let cfg = parse_config(config_json)?;
        let c = load_corpus(corpus, truncate)?;
        let specs: Vec<_> = specs.into_iter().map(|s| s.inner).collect();
        let (table, _) = py
            .detach(|| bench_table::BenchTable::build(&specs, &c, &cfg, &seeds, Path::new(path), jobs))
            .map_err(err)?;
        Ok(PyBenchTable { inner: Arc::new(table) })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn hashes(&self) -> Vec<String> {
        self.inner.hashes().map(str::to_string).collect()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn spec(&self, hash: &str) -> PyResult<PyCellSpec> {
        self.inner
            .spec(hash)
            .map(|s| PyCellSpec { inner: s.clone() })
            .ok_or_else(|| PyKeyError::new_err(hash.to_string()))
    }

    #[pyo3(signature = (hash, epoch, seed = 0))]
    fn query(&self, py: Python<'_>, hash: &str, epoch: usize, seed: u64) -> PyResult<Py<PyAny>> {
        let m = self.inner.query(hash, epoch, seed).map_err(err)?;
        to_py(py, m)
    }

    fn diverged_fraction(&self) -> f64 {
        self.inner.diverged_fraction()
    }
}

#[pyclass(module = "recur_nas", name = "NasEnv")]
struct PyNasEnv {
    inner: nas_env::NasEnv,
}

#[pymethods]
impl PyNasEnv {
    #[new]
    #[pyo3(signature = (table, budget_s, seed = 0))]
    fn new(table: &PyBenchTable, budget_s: f64, seed: u64) -> PyResult<Self> {
        nas_env::NasEnv::new(Arc::clone(&table.inner), budget_s, seed)
            .map(|inner| PyNasEnv { inner })
            .map_err(err)
    }

    /// Returns `(status, charged_s, last epoch metrics or None)`.
    fn train_arch(&mut self, py: Python<'_>, hash: &str, epochs: usize) -> PyResult<(String, f64, Py<PyAny>)> {
        let r = self.inner.train_arch(hash, epochs).map_err(err)?;
        let status = serde_json::to_value(r.status).map_err(err)?;
        Ok((
            status.as_str().unwrap_or_default().to_string(),
            r.charged_s,
            to_py(py, &r.last())?,
        ))
    }

    fn get_metrics(&self, py: Python<'_>, hash: &str, epoch: usize) -> PyResult<Py<PyAny>> {
        let m = self.inner.get_metrics(hash, epoch).map_err(err)?;
        to_py(py, &m)
    }

    #[getter]
    fn clock(&self) -> f64 {
        self.inner.clock()
    }

    #[getter]
    fn l_star(&self) -> f64 {
        self.inner.l_star()
    }

    fn regret(&self) -> PyResult<f64> {
        self.inner.regret().map_err(err)
    }

    /// Monotone regret trace as `(time_s, regret)` pairs.
    fn trace(&self) -> Vec<(f64, f64)> {
        self.inner.trace().points.iter().map(|p| (p.time_s, p.regret)).collect()
    }
}

/// Runs one optimizer trial and returns the run as a dict.
#[pyfunction]
#[pyo3(signature = (method, table, budget_s, seed = 0))]
fn run_optimizer(py: Python<'_>, method: &str, table: &PyBenchTable, budget_s: f64, seed: u64) -> PyResult<Py<PyAny>> {
    let method: Method = method.parse().map_err(err)?;
    let params = OptimizerParams::default();
    let t = Arc::clone(&table.inner);
    let run = py
        .detach(|| {
            let features = TableFeatures::standard(&t, &params);
            optimizers::run(method, t.clone(), &features, budget_s, seed, &params)
        })
        .map_err(err)?;
    to_py(py, &run)
}

#[pymodule]
fn recur_nas(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCellSpec>()?;
    m.add_class::<PyBenchTable>()?;
    m.add_class::<PyNasEnv>()?;
    m.add_function(wrap_pyfunction!(build_rnn, m)?)?;
    m.add_function(wrap_pyfunction!(build_lstm, m)?)?;
    m.add_function(wrap_pyfunction!(build_gru, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(mutate, m)?)?;
    m.add_function(wrap_pyfunction!(embed, m)?)?;
    m.add_function(wrap_pyfunction!(ged_upper_bound, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run_optimizer, m)?)?;
    Ok(())
}
