//! Python bindings. Arrays cross the boundary as nested lists of floats.

use std::path::PathBuf;

use milb_core::acquisition::{self, AcquisitionKind};
use milb_core::benchmarks::{BenchmarkSpec, System};
use milb_core::harness::{self, ExperimentConfig};
use milb_core::mdn::{self, Dataset, EnsembleCheckpoint, MdnArch, TrainConfig};
use milb_core::selection::{self, BatchRequest, Strategy};
use milb_core::{gmm, RngStream};
use ndarray::Array2;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: milb_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_array(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Array2::from_shape_vec((rows.len(), ncols), rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

/// Diagonal-covariance Gaussian mixture.
#[pyclass(name = "GaussianMixture", module = "milb", skip_from_py_object)]
#[derive(Clone)]
struct PyMixture {
    inner: gmm::DiagGaussianMixture,
}

#[pymethods]
impl PyMixture {
    #[new]
    fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self {
            inner: gmm::DiagGaussianMixture::new(weights, means, variances).map_err(err)?,
        })
    }

    #[getter]
    fn n_components(&self) -> usize {
        self.inner.n_components()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    fn means(&self) -> Vec<Vec<f64>> {
        (0..self.inner.n_components()).map(|k| self.inner.mean(k).to_vec()).collect()
    }

    fn variances(&self) -> Vec<Vec<f64>> {
        (0..self.inner.n_components()).map(|k| self.inner.variance(k).to_vec()).collect()
    }

    fn log_pdf(&self, y: Vec<f64>) -> PyResult<f64> {
        self.inner.log_pdf(&y).map_err(err)
    }

    fn entropy_lower(&self) -> f64 {
        self.inner.entropy_lower()
    }

    fn entropy_upper(&self) -> f64 {
        self.inner.entropy_upper()
    }

    /// Returns `(estimate, stderr)`.
    #[pyo3(signature = (n_samples, seed=0))]
    fn entropy_mc(&self, n_samples: usize, seed: u64) -> PyResult<(f64, f64)> {
        let e = self
            .inner
            .entropy_mc(n_samples, &mut RngStream::new(seed, 0))
            .map_err(err)?;
        Ok((e.estimate, e.stderr))
    }

    #[pyo3(signature = (n, seed=0))]
    fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = RngStream::new(seed, 0);
        (0..n).map(|_| self.inner.sample(&mut rng)).collect()
    }

    fn __repr__(&self) -> String {
        format!("GaussianMixture(n_components={}, dim={})", self.inner.n_components(), self.inner.dim())
    }
}

fn ensemble_of(members: Vec<PyRef<'_, PyMixture>>, weights: Option<Vec<f64>>) -> PyResult<gmm::EnsemblePrediction> {
    let ms: Vec<_> = members.iter().map(|m| m.inner.clone()).collect();
    match weights {
        Some(w) => gmm::EnsemblePrediction::new(ms, w),
        None => gmm::EnsemblePrediction::uniform(ms),
    }
    .map_err(err)
}

/// MI-LB score of one candidate, given its members' predictive mixtures.
#[pyfunction(name = "milb")]
#[pyo3(signature = (members, weights=None))]
fn milb_score(members: Vec<PyRef<'_, PyMixture>>, weights: Option<Vec<f64>>) -> PyResult<f64> {
    Ok(acquisition::milb(&ensemble_of(members, weights)?))
}

#[pyfunction]
#[pyo3(signature = (members, weights=None))]
fn epistemic_variance(members: Vec<PyRef<'_, PyMixture>>, weights: Option<Vec<f64>>) -> PyResult<f64> {
    Ok(acquisition::epistemic_variance(&ensemble_of(members, weights)?))
}

/// Monte-Carlo mutual information; returns `(estimate, stderr)`.
#[pyfunction]
#[pyo3(signature = (members, n_samples, seed=0, weights=None))]
fn mutual_information_mc(
    members: Vec<PyRef<'_, PyMixture>>,
    n_samples: usize,
    seed: u64,
    weights: Option<Vec<f64>>,
) -> PyResult<(f64, f64)> {
    let e = acquisition::mutual_information_mc(&ensemble_of(members, weights)?, n_samples, &mut RngStream::new(seed, 0))
        .map_err(err)?;
    Ok((e.estimate, e.stderr))
}

#[pyfunction]
#[pyo3(signature = (members, weights=None))]
fn marginal_mixture(members: Vec<PyRef<'_, PyMixture>>, weights: Option<Vec<f64>>) -> PyResult<PyMixture> {
    Ok(PyMixture {
        inner: ensemble_of(members, weights)?.marginal_mixture(),
    })
}

/// Choose `k` indices from a score vector. `strategy` is `topk`, `sbal`
/// or `maxdist`; MaxDist needs `features`.
#[pyfunction]
#[pyo3(signature = (scores, k, strategy="topk", temperature=1.0, weight=1.0, exclude=Vec::new(), features=None, seed=0))]
#[allow(clippy::too_many_arguments)]
fn select(
    scores: Vec<f64>,
    k: usize,
    strategy: &str,
    temperature: f64,
    weight: f64,
    exclude: Vec<usize>,
    features: Option<Vec<Vec<f64>>>,
    seed: u64,
) -> PyResult<Vec<usize>> {
    let strategy = match strategy {
        "topk" => Strategy::Topk,
        "sbal" => Strategy::Sbal { temperature },
        "maxdist" => Strategy::Maxdist { weight },
        other => return Err(PyValueError::new_err(format!("unknown strategy '{other}'"))),
    };
    let f = features.map(|f| to_array(&f)).transpose()?;
    let req = BatchRequest::new(k, strategy, exclude);
    selection::select(&scores, f.as_ref().map(|a| a.view()), &req, &mut RngStream::new(seed, 0)).map_err(err)
}

/// Greedy k-center selection over feature rows.
#[pyfunction]
fn select_coreset(features: Vec<Vec<f64>>, labeled: Vec<Vec<f64>>, k: usize) -> PyResult<Vec<usize>> {
    let f = to_array(&features)?;
    let l = if labeled.is_empty() {
        Array2::zeros((0, f.ncols()))
    } else {
        to_array(&labeled)?
    };
    acquisition::select_coreset(f.view(), l.view(), k).map_err(err)
}

/// One of the benchmark simulators with default settings.
#[pyclass(name = "Benchmark", module = "milb")]
struct PyBenchmark {
    spec: BenchmarkSpec,
    system: System,
}

#[pymethods]
impl PyBenchmark {
    /// `name` is `multimodal`, `double_well` or `ternary`; `params` is an
    /// optional JSON object overriding simulator settings.
    #[new]
    #[pyo3(signature = (name, params=None))]
    fn new(name: &str, params: Option<&str>) -> PyResult<Self> {
        let spec = match params {
            None => BenchmarkSpec::from_name(name).map_err(err)?,
            Some(p) => {
                let mut v: serde_json::Value =
                    serde_json::from_str(p).map_err(|e| PyValueError::new_err(e.to_string()))?;
                v["name"] = serde_json::Value::String(name.to_string());
                serde_json::from_value(v).map_err(|e| PyValueError::new_err(e.to_string()))?
            }
        };
        let system = spec.build().map_err(err)?;
        Ok(Self { spec, system })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.spec.name()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.system.input_dim()
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.system.output_dim()
    }

    #[pyo3(signature = (n, seed=0))]
    fn sample_inputs(&self, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&self.system.sample_inputs(n, &mut RngStream::new(seed, 0)).map_err(err)?))
    }

    /// Labels for each row; row `i` uses its own stream derived from `seed`.
    #[pyo3(signature = (x, seed=0))]
    fn label(&self, x: Vec<Vec<f64>>, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let xa = to_array(&x)?;
        Ok(to_rows(&self.system.label_rows(&xa, &RngStream::new(seed, 0)).map_err(err)?))
    }

    /// Closed-form conditional density, or `None` for the simulator-only benchmark.
    fn oracle(&self, x: Vec<f64>) -> PyResult<Option<PyMixture>> {
        match self.system.oracle(&x) {
            None => Ok(None),
            Some(m) => Ok(Some(PyMixture { inner: m.map_err(err)? })),
        }
    }
}

/// Ensemble of mixture density networks.
#[pyclass(name = "MdnEnsemble", module = "milb")]
struct PyEnsemble {
    inner: mdn::MdnEnsemble,
}

#[pymethods]
impl PyEnsemble {
    /// Train `n_ens` members from scratch. `train` is an optional JSON
    /// object overriding optimizer settings.
    #[staticmethod]
    #[pyo3(signature = (x, y, hidden=64, depth=2, components=4, n_ens=4, seed=0, train=None))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        py: Python<'_>,
        x: Vec<Vec<f64>>,
        y: Vec<Vec<f64>>,
        hidden: usize,
        depth: usize,
        components: usize,
        n_ens: usize,
        seed: u64,
        train: Option<&str>,
    ) -> PyResult<Self> {
        let cfg: TrainConfig = match train {
            None => TrainConfig::default(),
            Some(t) => serde_json::from_str(t).map_err(|e| PyValueError::new_err(e.to_string()))?,
        };
        let data = Dataset::new(to_array(&x)?, to_array(&y)?).map_err(err)?;
        let arch = MdnArch {
            input_dim: data.input_dim(),
            output_dim: data.output_dim(),
            hidden,
            depth,
            components,
        };
        let inner = py
            .detach(|| mdn::train_ensemble(&data, arch, &cfg, n_ens, &RngStream::new(seed, 0)))
            .map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = EnsembleCheckpoint::load(&path).map_err(err)?;
        Ok(Self {
            inner: ck.to_ensemble().map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        EnsembleCheckpoint::from_ensemble(&self.inner).save(&path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Per-member predictive mixtures at one input.
    fn predict(&self, x: Vec<f64>) -> PyResult<Vec<PyMixture>> {
        let pred = mdn::predict_ensemble(&self.inner, &x).map_err(err)?;
        Ok(pred.members().iter().map(|m| PyMixture { inner: m.clone() }).collect())
    }

    /// Mean negative log marginal density over a test set.
    fn nll(&self, x: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> PyResult<f64> {
        harness::evaluate_nll(&self.inner, &to_array(&x)?, &to_array(&y)?).map_err(err)
    }

    /// Per-row acquisition scores: `milb`, `variance` or `random`.
    #[pyo3(signature = (x, acquisition="milb", seed=0))]
    fn scores(&self, x: Vec<Vec<f64>>, acquisition: &str, seed: u64) -> PyResult<Vec<f64>> {
        let kind: AcquisitionKind = acquisition.parse().map_err(err)?;
        let xa = to_array(&x)?;
        let s = harness::run::score_pool(kind, &self.inner, &xa, 256, &mut RngStream::new(seed, 0)).map_err(err)?;
        Ok(s.scores)
    }
}

/// Built-in settings for a benchmark as a JSON string.
#[pyfunction]
fn default_config(benchmark: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::defaults(benchmark).map_err(err)?;
    serde_json::to_string_pretty(&cfg).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Run one active-learning experiment; returns the record as JSON.
#[pyfunction]
fn run_experiment(py: Python<'_>, config: &str, seed: u64) -> PyResult<String> {
    let cfg: ExperimentConfig = serde_json::from_str(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let rec = py.detach(|| harness::run_experiment(&cfg, seed)).map_err(err)?;
    Ok(rec.to_json())
}

#[pyfunction]
fn config_hash(config: &str) -> PyResult<String> {
    let cfg: ExperimentConfig = serde_json::from_str(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(cfg.hash())
}

#[pymodule]
fn milb(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMixture>()?;
    m.add_class::<PyBenchmark>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_function(wrap_pyfunction!(milb_score, m)?)?;
    m.add_function(wrap_pyfunction!(epistemic_variance, m)?)?;
    m.add_function(wrap_pyfunction!(mutual_information_mc, m)?)?;
    m.add_function(wrap_pyfunction!(marginal_mixture, m)?)?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    m.add_function(wrap_pyfunction!(select_coreset, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(config_hash, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
