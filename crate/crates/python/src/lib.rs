//! Python bindings: datasets, training, plain-GCN baselines and the bound
//! and simulation tools.
//!
//! Structured results (metrics, configs, simulation tallies) cross the
//! boundary as JSON and come out as plain dicts.

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde_json::Value;

use dccgcn::graph::{self, SplitSpec, SyntheticSpec};
use dccgcn::tensor::Tensor;
use dccgcn::training::{self, GcnConfig, Preset, TrainConfig};
use dccgcn::{theory, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        Error::Divergence { .. } | Error::Numeric { .. } => PyArithmeticError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn dict_to_json(py: Python<'_>, d: &Bound<'_, PyDict>) -> PyResult<Value> {
    let text: String = py.import("json")?.call_method1("dumps", (d,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// The preset's training config with the keys of `overrides` replaced.
fn build_config(py: Python<'_>, preset: &str, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<TrainConfig> {
    let preset: Preset = preset.parse().map_err(to_py)?;
    let mut base = serde_json::to_value(preset.config()).map_err(|e| PyValueError::new_err(e.to_string()))?;
    if let (Some(d), Value::Object(map)) = (overrides, &mut base) {
        if let Value::Object(over) = dict_to_json(py, d)? {
            map.extend(over);
        }
    }
    let cfg: TrainConfig = serde_json::from_value(base).map_err(|e| PyValueError::new_err(e.to_string()))?;
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// Node features, labels, topology and a train/test split.
#[pyclass(name = "Dataset", module = "dccgcn_py")]
struct PyDataset {
    inner: graph::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Builds a dataset from row-major features, integer labels and
    /// undirected edges.
    #[new]
    fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, edges: Vec<(usize, usize)>) -> PyResult<Self> {
        let n = features.len();
        let x = Tensor::from_rows(&features).map_err(to_py)?;
        let c = labels.iter().max().map_or(0, |m| m + 1);
        let g = graph::SparseGraph::from_edges(n, &edges, true).map_err(to_py)?;
        Ok(Self { inner: graph::Dataset::new(x, labels, c, g).map_err(to_py)? })
    }

    #[staticmethod]
    #[pyo3(signature = (n=600, c=4, d=64, separation=0.6, p_intra=0.03, p_inter=0.0025, seed=0))]
    fn synthetic(n: usize, c: usize, d: usize, separation: f64, p_intra: f64, p_inter: f64, seed: u64) -> PyResult<Self> {
        let spec = SyntheticSpec { n, c, d, separation, p_intra, p_inter, seed };
        Ok(Self { inner: graph::generate_synthetic(&spec).map_err(to_py)? })
    }

    /// Reads `cora.content` and `cora.cites` from `directory`.
    #[staticmethod]
    fn load_cora(directory: std::path::PathBuf) -> PyResult<Self> {
        let ds = graph::load_cora_format(directory.join("cora.content"), directory.join("cora.cites")).map_err(to_py)?;
        Ok(Self { inner: ds })
    }

    #[staticmethod]
    fn load_generic(directory: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self { inner: graph::load_generic(directory).map_err(to_py)? })
    }

    fn save_generic(&self, directory: std::path::PathBuf) -> PyResult<()> {
        graph::save_generic(&self.inner, directory).map_err(to_py)?;
        Ok(())
    }

    /// Replaces the split with `per_class` training nodes from every class.
    fn split_per_class(&mut self, per_class: usize, seed: u64) -> PyResult<()> {
        self.apply(SplitSpec::PerClass(per_class), seed)
    }

    /// Replaces the split with a `fraction` of all nodes for training.
    fn split_fraction(&mut self, fraction: f64, seed: u64) -> PyResult<()> {
        self.apply(SplitSpec::Fraction(fraction), seed)
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    #[getter]
    fn num_features(&self) -> usize {
        self.inner.num_features()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels.clone()
    }

    #[getter]
    fn train_nodes(&self) -> Vec<usize> {
        self.inner.train_nodes()
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.graph.undirected_edges()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(nodes={}, classes={}, features={}, edges={}, train={})",
            self.inner.num_nodes(),
            self.inner.num_classes,
            self.inner.num_features(),
            self.inner.graph.undirected_edges().len(),
            self.inner.train_nodes().len()
        )
    }
}

impl PyDataset {
    fn apply(&mut self, spec: SplitSpec, seed: u64) -> PyResult<()> {
        let split = graph::make_split(&self.inner, spec, seed).map_err(to_py)?;
        self.inner.apply_split(&split).map_err(to_py)
    }
}

/// A trained dual-channel model and its test metrics.
#[pyclass(name = "Model", module = "dccgcn_py")]
struct PyModel {
    model: training::Model,
    metrics: training::Metrics,
}

#[pymethods]
impl PyModel {
    #[getter]
    fn accuracy(&self) -> f64 {
        self.metrics.accuracy
    }

    /// Full metrics, including the resolved config and loss traces.
    #[getter]
    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.metrics)
    }

    /// Fused class probabilities, one row per node.
    fn predict_proba(&self) -> PyResult<Vec<Vec<f64>>> {
        let (probs, _) = self.model.predict(!self.model.config.no_calibration).map_err(to_py)?;
        Ok((0..probs.rows()).map(|i| probs.row(i).to_vec()).collect())
    }

    fn predict(&self) -> PyResult<Vec<usize>> {
        let (probs, _) = self.model.predict(!self.model.config.no_calibration).map_err(to_py)?;
        Ok(probs.argmax_rows())
    }

    /// Nodes on which the two channels disagree.
    fn low_confidence_nodes(&self) -> PyResult<Vec<usize>> {
        let (_, partition) = self.model.predict(!self.model.config.no_calibration).map_err(to_py)?;
        Ok(partition.low)
    }

    /// Input of the fused classifier, one row per node.
    fn embeddings(&self) -> PyResult<Vec<Vec<f64>>> {
        let e = self.model.embeddings().map_err(to_py)?;
        Ok((0..e.rows()).map(|i| e.row(i).to_vec()).collect())
    }

    /// Writes the parameter dump read by the command-line tools.
    fn save_params(&self, path: std::path::PathBuf) -> PyResult<()> {
        let file = std::fs::File::create(path)?;
        self.model.write_params(std::io::BufWriter::new(file)).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Model(accuracy={:.4}, macro_f1={:.4})", self.metrics.accuracy, self.metrics.macro_f1)
    }
}

/// The training config of a preset, as a dict.
#[pyfunction]
#[pyo3(signature = (preset="cora"))]
fn default_config<'py>(py: Python<'py>, preset: &str) -> PyResult<Bound<'py, PyAny>> {
    json_to_py(py, &build_config(py, preset, None)?)
}

/// Trains on the dataset's training mask; `config` overrides preset keys.
#[pyfunction]
#[pyo3(signature = (dataset, config=None, preset="cora"))]
fn train(py: Python<'_>, dataset: &PyDataset, config: Option<&Bound<'_, PyDict>>, preset: &str) -> PyResult<PyModel> {
    let cfg = build_config(py, preset, config)?;
    let ds = dataset.inner.clone();
    let (model, metrics) = py.detach(move || training::train(&ds, &cfg)).map_err(to_py)?;
    Ok(PyModel { model, metrics })
}

/// Plain two-layer GCN baseline; returns accuracy, macro-F1 and loss trace.
#[pyfunction]
#[pyo3(signature = (dataset, hidden=16, lr=0.01, weight_decay=5e-4, dropout=0.5, epochs=200, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train_gcn<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    hidden: usize,
    lr: f64,
    weight_decay: f64,
    dropout: f64,
    epochs: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = GcnConfig { hidden, lr, weight_decay, dropout, epochs, seed };
    let ds = dataset.inner.clone();
    let result = py.detach(move || training::train_gcn(&ds, &cfg, None)).map_err(to_py)?;
    json_to_py(py, &result)
}

#[pyfunction]
fn theorem1_bound(p1: f64, p2: f64) -> PyResult<f64> {
    theory::theorem1_bound(p1, p2).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (p1, p2, c, gamma=0.0))]
fn lowconf_accuracy_exact(p1: f64, p2: f64, c: usize, gamma: f64) -> PyResult<f64> {
    theory::lowconf_accuracy_exact(p1, p2, c, gamma).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (p1, p2, c, gamma=0.0))]
fn agreement_fraction(p1: f64, p2: f64, c: usize, gamma: f64) -> PyResult<f64> {
    theory::agreement_fraction(p1, p2, c, gamma).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (p1, p2, c, gamma=0.0))]
fn gain_bound(p1: f64, p2: f64, c: usize, gamma: f64) -> PyResult<f64> {
    Ok(theory::evaluate_bound(theory::BoundKind::Theorem2, p1, p2, c, gamma).map_err(to_py)?.value)
}

#[pyfunction]
#[pyo3(signature = (p1, p2, c, gamma=0.0))]
fn effective_gain_bound(p1: f64, p2: f64, c: usize, gamma: f64) -> PyResult<f64> {
    Ok(theory::evaluate_bound(theory::BoundKind::EffectiveGain, p1, p2, c, gamma).map_err(to_py)?.value)
}

/// Monte Carlo tallies of two symmetric-error classifiers, as a dict.
#[pyfunction]
#[pyo3(signature = (p1, p2, c=7, n=1_000_000, rho=0.0, seed=0))]
fn simulate<'py>(py: Python<'py>, p1: f64, p2: f64, c: usize, n: u64, rho: f64, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let spec = theory::SimSpec { n, c, p1, p2, rho, seed };
    let result = py.detach(move || theory::simulate(&spec)).map_err(to_py)?;
    json_to_py(py, &result)
}

type SurfaceRow = (usize, f64, f64, f64, f64, f64);

/// Rows `(c, p1, p2, gamma, gain_bound, effective_gain_bound)` over the grid.
#[pyfunction]
#[pyo3(signature = (classes, step=0.02, gamma=0.0))]
fn sweep_gain_surface(classes: Vec<usize>, step: f64, gamma: f64) -> PyResult<Vec<SurfaceRow>> {
    let rows = theory::sweep_gain_surface(&classes, step, gamma).map_err(to_py)?;
    Ok(rows.into_iter().map(|r| (r.c, r.p1, r.p2, r.gamma, r.theorem2_bound, r.effective_gain_bound)).collect())
}

#[pymodule]
fn dccgcn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(train_gcn, m)?)?;
    m.add_function(wrap_pyfunction!(theorem1_bound, m)?)?;
    m.add_function(wrap_pyfunction!(lowconf_accuracy_exact, m)?)?;
    m.add_function(wrap_pyfunction!(agreement_fraction, m)?)?;
    m.add_function(wrap_pyfunction!(gain_bound, m)?)?;
    m.add_function(wrap_pyfunction!(effective_gain_bound, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_gain_surface, m)?)?;
    Ok(())
}
