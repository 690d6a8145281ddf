//! Python bindings for the afrnet pipeline.

use std::path::PathBuf;

use afrnet::classifier::{self, EvaluationReport};
use afrnet::data::{self, generate_synthetic_benchmark};
use afrnet::gan::GanMode;
use afrnet::pipeline::{self, AblationRow};
use afrnet::prototype;
use afrnet::AfrError;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(afrnet_py, AfrnetError, PyException);

fn to_py(e: AfrError) -> PyErr {
    AfrnetError::new_err(format!("{}: {}", e.kind(), e))
}

/// Every knob of a run, stored as the library config.
#[pyclass(name = "RunConfig")]
struct PyRunConfig {
    inner: pipeline::RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    fn new() -> Self {
        Self {
            inner: pipeline::RunConfig::default(),
        }
    }

    /// Parses a JSON config; missing fields take their defaults.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(|e| AfrnetError::new_err(format!("json: {e}")))?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: pipeline::RunConfig::load(path).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.inner).expect("config serializes")
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn mode(&self) -> String {
        self.inner.gan.mode.to_string()
    }

    #[setter]
    fn set_mode(&mut self, mode: &str) -> PyResult<()> {
        self.inner.gan.mode = mode.parse::<GanMode>().map_err(to_py)?;
        Ok(())
    }

    #[getter]
    fn selection(&self) -> bool {
        self.inner.selection
    }

    #[setter]
    fn set_selection(&mut self, on: bool) {
        self.inner.selection = on;
    }

    #[getter]
    fn gzsl(&self) -> bool {
        self.inner.gzsl
    }

    #[setter]
    fn set_gzsl(&mut self, on: bool) {
        self.inner.gzsl = on;
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.gan.iterations
    }

    #[setter]
    fn set_iterations(&mut self, n: usize) {
        self.inner.gan.iterations = n;
    }

    #[getter]
    fn per_class(&self) -> usize {
        self.inner.per_class
    }

    #[setter]
    fn set_per_class(&mut self, n: usize) {
        self.inner.per_class = n;
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig(seed={}, mode={}, selection={}, gzsl={}, iterations={})",
            self.inner.seed, self.inner.gan.mode, self.inner.selection, self.inner.gzsl, self.inner.gan.iterations
        )
    }
}

/// A labelled feature set with class semantics and a seen/unseen split.
#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: data::Dataset,
    noise_dims: Option<Vec<usize>>,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: data::load_dataset(path).map_err(to_py)?,
            noise_dims: None,
        })
    }

    /// Generates the seeded synthetic benchmark described by `config`.
    #[staticmethod]
    fn synthetic(config: &PyRunConfig) -> PyResult<Self> {
        let bench = generate_synthetic_benchmark(&config.inner.benchmark).map_err(to_py)?;
        Ok(Self {
            inner: bench.dataset,
            noise_dims: Some(bench.noise_dims),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn num_samples(&self) -> usize {
        self.inner.labels().len()
    }

    #[getter]
    fn visual_dim(&self) -> usize {
        self.inner.visual_dim()
    }

    #[getter]
    fn semantic_dim(&self) -> usize {
        self.inner.semantic_dim()
    }

    #[getter]
    fn seen(&self) -> Vec<usize> {
        self.inner.split().seen.clone()
    }

    #[getter]
    fn unseen(&self) -> Vec<usize> {
        self.inner.split().unseen.clone()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    /// Row-major features as a list of rows.
    fn features(&self) -> Vec<Vec<f64>> {
        let f = self.inner.features();
        (0..f.rows()).map(|r| f.row(r).to_vec()).collect()
    }

    /// Constructed noise dimensions; `None` for loaded data.
    #[getter]
    fn noise_dims(&self) -> Option<Vec<usize>> {
        self.noise_dims.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(samples={}, v={}, s={}, seen={}, unseen={})",
            self.inner.labels().len(),
            self.inner.visual_dim(),
            self.inner.semantic_dim(),
            self.inner.split().seen.len(),
            self.inner.split().unseen.len()
        )
    }
}

/// Scores from one evaluator.
#[pyclass(name = "Report", get_all)]
struct PyReport {
    u_acc: f64,
    s_acc: Option<f64>,
    h_mean: Option<f64>,
    purity: Option<f64>,
    residual_ratio: Option<f64>,
    per_class: Vec<(usize, f64)>,
    seed: u64,
    json: String,
}

impl From<&EvaluationReport> for PyReport {
    fn from(r: &EvaluationReport) -> Self {
        Self {
            u_acc: r.u_acc,
            s_acc: r.s_acc,
            h_mean: r.h_mean,
            purity: r.purity,
            residual_ratio: r.residual_ratio.map(|x| x.ratio),
            per_class: r.per_class.iter().map(|(c, a)| (*c, *a)).collect(),
            seed: r.seed,
            json: serde_json::to_string_pretty(r).expect("report serializes"),
        }
    }
}

#[pymethods]
impl PyReport {
    fn __repr__(&self) -> String {
        format!("Report(u_acc={:.2}, s_acc={:?}, h_mean={:?})", self.u_acc, self.s_acc, self.h_mean)
    }
}

/// Runs the full pipeline and returns `(afrnet, nn1)` reports.
#[pyfunction]
fn run_pipeline(py: Python<'_>, dataset: &PyDataset, config: &PyRunConfig) -> PyResult<(PyReport, PyReport)> {
    let cfg = config.inner.clone().resolved();
    let ds = &dataset.inner;
    let outcome = py.detach(|| pipeline::run_pipeline(ds, &cfg)).map_err(to_py)?;
    Ok(((&outcome.reports.afrnet).into(), (&outcome.reports.nn1).into()))
}

/// Residual vs baseline and with vs without selection, as a list of dicts.
#[pyfunction]
fn ablate<'py>(py: Python<'py>, dataset: &PyDataset, config: &PyRunConfig) -> PyResult<Vec<Bound<'py, pyo3::types::PyDict>>> {
    let cfg = config.inner.clone().resolved();
    let ds = &dataset.inner;
    let rows: Vec<AblationRow> = py.detach(|| pipeline::ablate(ds, &cfg)).map_err(to_py)?;
    rows.iter()
        .map(|r| {
            let d = pyo3::types::PyDict::new(py);
            d.set_item("mode", r.mode.to_string())?;
            d.set_item("selection", r.selection)?;
            d.set_item("afrnet_u", r.afrnet_u)?;
            d.set_item("afrnet_s", r.afrnet_s)?;
            d.set_item("afrnet_h", r.afrnet_h)?;
            d.set_item("nn1_u", r.nn1_u)?;
            d.set_item("purity", r.purity)?;
            d.set_item("residual_ratio", r.residual_ratio)?;
            Ok(d)
        })
        .collect()
}

#[pyfunction]
fn harmonic_mean(u: f64, s: f64) -> PyResult<f64> {
    classifier::harmonic_mean(u, s).map_err(to_py)
}

#[pyfunction]
fn per_class_top1(predictions: Vec<usize>, labels: Vec<usize>, classes: Vec<usize>) -> PyResult<f64> {
    classifier::per_class_top1(&predictions, &labels, &classes).map_err(to_py)
}

/// Indices of the `k` smallest errors, ties to the lower index.
#[pyfunction]
#[pyo3(signature = (errors, k=None))]
fn select_features(errors: Vec<f64>, k: Option<usize>) -> PyResult<Vec<usize>> {
    prototype::select_features(&errors, k).map_err(to_py)
}

/// Runs the command-line front end with `argv` (no program name) and
/// returns its exit code.
#[pyfunction]
fn cli_run(py: Python<'_>, argv: Vec<String>) -> i32 {
    py.detach(|| afrnet::cli::run(std::iter::once("afrnet".to_string()).chain(argv)))
}

#[pymodule]
fn afrnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("AfrnetError", m.py().get_type::<AfrnetError>())?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(ablate, m)?)?;
    m.add_function(wrap_pyfunction!(harmonic_mean, m)?)?;
    m.add_function(wrap_pyfunction!(per_class_top1, m)?)?;
    m.add_function(wrap_pyfunction!(select_features, m)?)?;
    m.add_function(wrap_pyfunction!(cli_run, m)?)?;
    Ok(())
}
