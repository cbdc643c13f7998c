//! Python bindings: metrics, constraint tools, checkpoints and training.

use std::path::PathBuf;

use dcgmm::autodiff::Tensor;
use dcgmm::checkpoint::Checkpoint;
use dcgmm::data::{four_blobs as blobs, Dataset};
use dcgmm::model::{assign_latent, generate};
use dcgmm::pipeline::{self, RunConfigFile};
use dcgmm::Error;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Format { .. } | Error::Truncated { .. } => PyIOError::new_err(e.to_string()),
        Error::NonFinite { .. } => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    Tensor::from_rows(&rows).map_err(to_py)
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row_slice(i).to_vec()).collect()
}

#[pyfunction]
fn accuracy(pred: Vec<usize>, truth: Vec<usize>) -> PyResult<f64> {
    dcgmm::metrics::accuracy(&pred, &truth).map_err(to_py)
}

#[pyfunction]
fn nmi(pred: Vec<usize>, truth: Vec<usize>) -> PyResult<f64> {
    dcgmm::metrics::nmi(&pred, &truth).map_err(to_py)
}

#[pyfunction]
fn ari(pred: Vec<usize>, truth: Vec<usize>) -> PyResult<f64> {
    dcgmm::metrics::ari(&pred, &truth).map_err(to_py)
}

/// `alpha * ln((1 - q) / q)`.
#[pyfunction]
#[pyo3(signature = (q, alpha = dcgmm::constraints::DEFAULT_ALPHA))]
fn confidence_weight(q: f64, alpha: f64) -> PyResult<f64> {
    dcgmm::constraints::confidence_weight(q, alpha).map_err(to_py)
}

/// `(i, j, weight)` triples drawn from labels, optionally with flipped kinds.
#[pyfunction]
#[pyo3(signature = (labels, count, magnitude = dcgmm::constraints::DEFAULT_MAGNITUDE, noise = 0.0, seed = 0))]
fn sample_constraints(labels: Vec<usize>, count: usize, magnitude: f64, noise: f64, seed: u64) -> PyResult<Vec<(usize, usize, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cs = dcgmm::constraints::sample_constraints(&labels, count, magnitude, &mut rng).map_err(to_py)?;
    let cs = dcgmm::constraints::flip_noise(&cs, noise, &mut rng).map_err(to_py)?;
    Ok(cs.iter().map(|c| (c.i, c.j, c.weight())).collect())
}

/// Four 2-D Gaussian blobs; returns `(points, labels)`.
#[pyfunction]
#[pyo3(signature = (n, offset = 3.0, sigma = 1.25, seed = 0))]
fn four_blobs(n: usize, offset: f64, sigma: f64, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let ds = blobs(n, offset, sigma, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(to_py)?;
    Ok((rows(&ds.x), ds.labels.unwrap_or_default()))
}

/// Writes points (and optional labels) as a dataset file.
#[pyfunction]
#[pyo3(signature = (path, x, labels = None))]
fn save_dataset(path: PathBuf, x: Vec<Vec<f64>>, labels: Option<Vec<usize>>) -> PyResult<()> {
    let ds = Dataset::new(matrix(x)?, labels).map_err(to_py)?;
    dcgmm::data::save_dataset(&path, &ds).map_err(to_py)
}

/// Runs a training job from a JSON config; returns the summary as a dict.
#[pyfunction]
#[pyo3(signature = (config, seed = None))]
fn train<'py>(py: Python<'py>, config: PathBuf, seed: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = RunConfigFile::load(&config).map_err(to_py)?;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    let summary = py.allow_threads(|| pipeline::run_training(&cfg)).map_err(to_py)?;
    let d = PyDict::new_bound(py);
    d.set_item("seed", summary.seed)?;
    d.set_item("n_train", summary.n_train)?;
    d.set_item("n_test", summary.n_test)?;
    d.set_item("n_constraints", summary.n_constraints)?;
    d.set_item("best_epoch", summary.best_epoch)?;
    let scores = |s: Option<dcgmm::metrics::Scores>| s.map(|s| (s.acc, s.nmi, s.ari));
    d.set_item("best_test", scores(summary.best_test))?;
    d.set_item("final_test", scores(summary.final_test))?;
    Ok(d)
}

/// `(name, passed, detail)` for every built-in check.
#[pyfunction]
fn selftest() -> Vec<(String, bool, String)> {
    dcgmm::selftest::run().into_iter().map(|c| (c.name.to_string(), c.passed, c.detail)).collect()
}

/// A trained network and mixture prior.
#[pyclass(name = "Checkpoint")]
struct PyCheckpoint {
    inner: Checkpoint,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyCheckpoint {
            inner: Checkpoint::load(&path).map_err(to_py)?,
        })
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.mixture.k()
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.mixture.latent_dim()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.model.spec().input_dim
    }

    /// Latent means for each row of `x`.
    fn encode(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let enc = self.inner.model.encode(&matrix(x)?).map_err(to_py)?;
        Ok(rows(&enc.mean))
    }

    /// Most probable mixture component for each row of `x`.
    fn assign(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        let z = self.inner.model.encode(&matrix(x)?).map_err(to_py)?.mean;
        assign_latent(&self.inner.mixture, &z).map_err(to_py)
    }

    /// Decoded means of `n` latent draws from component `k`.
    #[pyo3(signature = (k, n, seed = 0))]
    fn generate(&self, k: usize, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let x = generate(&self.inner.model, &self.inner.mixture, k, n, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(to_py)?;
        Ok(rows(&x))
    }

    /// `(acc, nmi, ari)` against true labels.
    fn evaluate(&self, x: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<(f64, f64, f64)> {
        let ds = Dataset::new(matrix(x)?, Some(labels)).map_err(to_py)?;
        let s = pipeline::evaluate(&self.inner, &ds).map_err(to_py)?;
        Ok((s.acc, s.nmi, s.ari))
    }
}

#[pymodule]
pub fn dcgmm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(nmi, m)?)?;
    m.add_function(wrap_pyfunction!(ari, m)?)?;
    m.add_function(wrap_pyfunction!(confidence_weight, m)?)?;
    m.add_function(wrap_pyfunction!(sample_constraints, m)?)?;
    m.add_function(wrap_pyfunction!(four_blobs, m)?)?;
    m.add_function(wrap_pyfunction!(save_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    m.add_class::<PyCheckpoint>()?;
    Ok(())
}
