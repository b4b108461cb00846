//! Python bindings: the online estimator, synthetic worlds with their exact
//! successor-feature oracle, experiments, and the verification checks.

use std::sync::Arc;

use nalgebra::DVector;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use optibfm::cli::{verify_reports, VerifyArgs};
use optibfm::harness::{self, ExperimentConfig};
use optibfm::sfworld::{make_random_world, FeatureWorld, SfOracle, WorldConfig};
use optibfm::{rng, ConfidenceSpec, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter(_)
        | Error::DimensionMismatch { .. }
        | Error::NonFinite(_)
        | Error::Config(_)
        | Error::InsufficientData { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn vec(x: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(x)
}

/// Ridge least squares with rank-1 Cholesky updates.
#[pyclass(name = "Estimator", module = "optibfm_py")]
pub struct PyEstimator {
    inner: optibfm::Estimator,
}

#[pymethods]
impl PyEstimator {
    #[new]
    #[pyo3(signature = (dim, lam = 1.0, rho = 1.0))]
    fn new(dim: usize, lam: f64, rho: f64) -> PyResult<Self> {
        Ok(PyEstimator {
            inner: optibfm::Estimator::new(dim, lam, rho).map_err(to_py)?,
        })
    }

    fn update(&mut self, phi: Vec<f64>, r: f64) -> PyResult<()> {
        self.inner.update(&vec(phi), r).map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn count(&self) -> u64 {
        self.inner.count()
    }

    #[getter]
    fn zhat(&self) -> Vec<f64> {
        self.inner.zhat().as_slice().to_vec()
    }

    /// `V` as a list of rows.
    fn precision(&self) -> Vec<Vec<f64>> {
        let v = self.inner.precision();
        v.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    fn log_det(&self) -> f64 {
        self.inner.log_det()
    }

    fn beta_fixed(&self, beta: f64) -> f64 {
        self.inner.beta(&ConfidenceSpec::Fixed { beta })
    }

    fn beta_theoretical(&self, delta: f64, s_bound: f64, sigma: f64) -> PyResult<f64> {
        let spec = ConfidenceSpec::Theoretical { delta, s_bound, sigma };
        spec.validate().map_err(to_py)?;
        Ok(self.inner.beta(&spec))
    }

    fn mahalanobis(&self, z: Vec<f64>) -> f64 {
        self.inner.mahalanobis(&vec(z))
    }

    fn d_gap(&self, phi: Vec<f64>) -> f64 {
        self.inner.d_gap(&vec(phi))
    }

    /// `n` draws from `N(ẑ, V⁻¹)`; the same seed gives the same draws.
    #[pyo3(signature = (n, seed = 0))]
    fn sample_posterior(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::stream(seed, &[]);
        (0..n)
            .map(|_| self.inner.sample_posterior(&mut r).as_slice().to_vec())
            .collect()
    }

    fn copy(&self) -> Self {
        PyEstimator {
            inner: self.inner.clone(),
        }
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner.to_snapshot()).expect("snapshot serializes")
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let snap = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyEstimator {
            inner: optibfm::Estimator::from_snapshot(&snap).map_err(to_py)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Estimator(dim={}, count={})", self.inner.dim(), self.inner.count())
    }
}

/// Random finite MDP with state features.
#[pyclass(name = "World", module = "optibfm_py", frozen)]
pub struct PyWorld {
    inner: Arc<FeatureWorld>,
}

#[pymethods]
impl PyWorld {
    #[new]
    #[pyo3(signature = (n_states, n_actions, dim, gamma, seed, horizon = None, branching = 4, feat_bound = 1.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        n_states: usize,
        n_actions: usize,
        dim: usize,
        gamma: f64,
        seed: u64,
        horizon: Option<usize>,
        branching: usize,
        feat_bound: f64,
    ) -> PyResult<Self> {
        let cfg = WorldConfig {
            n_states,
            n_actions,
            dim,
            gamma,
            horizon,
            branching,
            feat_bound,
            seed,
        };
        Ok(PyWorld {
            inner: Arc::new(make_random_world(&cfg).map_err(to_py)?),
        })
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn phi(&self, state: usize) -> PyResult<Vec<f64>> {
        if state >= self.inner.n_states() {
            return Err(PyValueError::new_err(format!("state {state} out of range")));
        }
        Ok(self.inner.phi(state).as_slice().to_vec())
    }
}

/// Exact successor features and greedy actions of the policy family.
#[pyclass(name = "Oracle", module = "optibfm_py")]
pub struct PyOracle {
    inner: SfOracle,
}

#[pymethods]
impl PyOracle {
    #[new]
    fn new(world: &PyWorld) -> Self {
        PyOracle {
            inner: SfOracle::new(world.inner.clone()),
        }
    }

    /// `(ψ(state, z), greedy action)`.
    fn query(&mut self, state: usize, z: Vec<f64>) -> PyResult<(Vec<f64>, usize)> {
        if state >= self.inner.world().n_states() {
            return Err(PyValueError::new_err(format!("state {state} out of range")));
        }
        let (psi, a) = self.inner.query(state, &vec(z)).map_err(to_py)?;
        Ok((psi.as_slice().to_vec(), a))
    }

    /// Expected return of the policy for `z` on the reward `w`.
    fn expected_return(&mut self, z: Vec<f64>, w: Vec<f64>) -> PyResult<f64> {
        self.inner.expected_return(&vec(z), &vec(w)).map_err(to_py)
    }
}

/// Runs an experiment described by TOML text. Writes the CSVs to `out` if
/// given and returns the episode log as a list of dicts.
#[pyfunction]
#[pyo3(signature = (config_toml, out = None, jobs = 1))]
fn run_experiment<'py>(
    py: Python<'py>,
    config_toml: &str,
    out: Option<std::path::PathBuf>,
    jobs: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = ExperimentConfig::from_toml_str(config_toml).map_err(to_py)?;
    let result = py.detach(|| harness::run_experiment(&cfg, jobs)).map_err(to_py)?;
    if let Some(dir) = out {
        harness::write_experiment(&result, &cfg, &dir).map_err(to_py)?;
    }
    let mut rows = Vec::new();
    for run in &result.runs {
        for e in &run.episodes {
            let d = PyDict::new(py);
            d.set_item("run_id", &run.run_id)?;
            d.set_item("agent", &run.agent)?;
            d.set_item("seed", run.seed)?;
            d.set_item("episode", e.episode)?;
            d.set_item("G_hat", e.g_hat)?;
            d.set_item("G_star", e.g_star)?;
            d.set_item("regret_cum", e.regret_cum)?;
            d.set_item("labels_cum", e.labels_cum)?;
            d.set_item("zhat_err", e.zhat_err)?;
            rows.push(d);
        }
    }
    Ok(rows)
}

/// Runs the verification checks whose name contains `filter`.
#[pyfunction]
#[pyo3(signature = (filter = None, instances = 100, coverage_runs = 40, coverage_steps = 1000, regret_worlds = 2, seed = 0))]
fn verify<'py>(
    py: Python<'py>,
    filter: Option<String>,
    instances: usize,
    coverage_runs: usize,
    coverage_steps: usize,
    regret_worlds: u64,
    seed: u64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let args = VerifyArgs {
        filter,
        negative_control: false,
        out: None,
        instances,
        coverage_runs,
        coverage_steps,
        regret_worlds,
        seed,
    };
    let reports = py.detach(|| verify_reports(&args)).map_err(to_py)?;
    reports
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("name", r.name)?;
            d.set_item("instances", r.instances)?;
            d.set_item("worst_violation", r.worst_violation)?;
            d.set_item("tolerance", r.tolerance)?;
            d.set_item("passed", r.passed)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn optibfm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEstimator>()?;
    m.add_class::<PyWorld>()?;
    m.add_class::<PyOracle>()?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
