//! Python bindings: kernels, likelihoods, a temporal sparse Markovian GP with
//! the four site-update algorithms, the synthetic generators and the metrics.
//! Kernel, likelihood and algorithm specs are plain dicts with the same keys
//! as the TOML experiment configs.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use smgp::chain::InducingGrid;
use smgp::harness::generate;
use smgp::harness::metrics;
use smgp::inference::objectives::{evaluate, Objective};
use smgp::inference::train::{fit, ModelBuilder, TemporalModel, TrainConfig};
use smgp::inference::{run_to_convergence, Algorithm, InferenceState};
use smgp::kernels::{kernel_eval, to_state_space, KernelSpec};
use smgp::likelihoods::Likelihood;
use smgp::linalg::{Gaussian, Mat, Vector};
use smgp::posterior::{predict_f, site_storage_len};
use smgp::problem::Problem;
use smgp::Error;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Training { .. } | Error::FilterDivergence { .. } | Error::Stability(_) => {
            PyRuntimeError::new_err(format!("[{}] {e}", e.kind()))
        }
        _ => PyValueError::new_err(format!("[{}] {e}", e.kind())),
    }
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let json = obj.py().import("json")?;
    let text: String = json.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Stationary kernel with a state-space form.
#[pyclass(module = "smgp_py", skip_from_py_object)]
#[derive(Clone)]
struct Kernel {
    spec: KernelSpec,
}

#[pymethods]
impl Kernel {
    /// `spec` is a dict such as `{"type": "matern32", "variance": 1.0, "lengthscale": 0.5}`.
    #[new]
    fn new(spec: &Bound<'_, PyAny>) -> PyResult<Self> {
        let spec: KernelSpec = from_py(spec)?;
        spec.validate().map_err(to_py_err)?;
        Ok(Kernel { spec })
    }

    /// Covariance at lag `tau` (first output for stacked kernels).
    fn __call__(&self, tau: f64) -> f64 {
        kernel_eval(&self.spec, tau)
    }

    #[getter]
    fn state_dim(&self) -> PyResult<usize> {
        Ok(to_state_space(&self.spec).map_err(to_py_err)?.f.nrows())
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    /// Hyperparameters on their natural scale.
    #[getter]
    fn params(&self) -> BTreeMap<String, f64> {
        self.spec
            .param_names()
            .into_iter()
            .zip(self.spec.log_params().into_iter().map(f64::exp))
            .collect()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.spec)
    }

    fn __repr__(&self) -> String {
        format!(
            "Kernel({})",
            serde_json::to_string(&self.spec).unwrap_or_default()
        )
    }
}

#[pyclass(name = "Likelihood", module = "smgp_py", skip_from_py_object)]
#[derive(Clone)]
struct PyLikelihood {
    lik: Likelihood,
}

#[pymethods]
impl PyLikelihood {
    /// `spec` is a dict such as `{"type": "gaussian", "variance": 0.1}`.
    #[new]
    fn new(spec: &Bound<'_, PyAny>) -> PyResult<Self> {
        let lik: Likelihood = from_py(spec)?;
        lik.validate().map_err(to_py_err)?;
        Ok(PyLikelihood { lik })
    }

    fn log_density(&self, y: f64, f: Vec<f64>) -> PyResult<f64> {
        self.lik.log_density(y, &f).map_err(to_py_err)
    }

    /// `(value, d_mean, d_cov)` of `E[log p(y|f)]` under `N(mean, cov)`.
    fn variational_expectation(
        &self,
        y: f64,
        mean: Vec<f64>,
        cov: Vec<Vec<f64>>,
    ) -> PyResult<(f64, Vec<f64>, Vec<Vec<f64>>)> {
        let (m, c) = gaussian_args(&mean, &cov)?;
        let ve = self
            .lik
            .variational_expectation(y, &m, &c)
            .map_err(to_py_err)?;
        Ok((ve.value, ve.d_mean.as_slice().to_vec(), rows(&ve.d_cov)))
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.lik.latent_dim()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.lik)
    }

    fn __repr__(&self) -> String {
        format!(
            "Likelihood({})",
            serde_json::to_string(&self.lik).unwrap_or_default()
        )
    }
}

fn gaussian_args(mean: &[f64], cov: &[Vec<f64>]) -> PyResult<(Vector, Mat)> {
    let o = mean.len();
    if cov.len() != o || cov.iter().any(|r| r.len() != o) {
        return Err(PyValueError::new_err(format!(
            "covariance must be {o}x{o} to match the mean"
        )));
    }
    Ok((
        Vector::from_column_slice(mean),
        Mat::from_fn(o, o, |i, j| cov[i][j]),
    ))
}

fn rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Temporal sparse Markovian GP: inducing states on a 1-D grid, one tied
/// site per segment.
#[pyclass(module = "smgp_py")]
struct SparseMarkovGP {
    model: TemporalModel,
    algorithm: Algorithm,
    log_params: Vec<f64>,
    problem: Problem,
    state: InferenceState,
}

#[pymethods]
impl SparseMarkovGP {
    /// With `m` the grid has `m` evenly spaced points over the inputs; without
    /// it (or with `z`) the given or data inputs are used. `algorithm` is a
    /// dict such as `{"name": "pep", "alpha": 0.5}`.
    #[new]
    #[pyo3(signature = (kernel, likelihood, x, y, m=None, z=None, algorithm=None))]
    fn new(
        kernel: &Kernel,
        likelihood: &PyLikelihood,
        x: Vec<f64>,
        y: Vec<f64>,
        m: Option<usize>,
        z: Option<Vec<f64>>,
        algorithm: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<Self> {
        if x.len() != y.len() {
            return Err(PyValueError::new_err("x and y differ in length"));
        }
        let grid = match (z, m) {
            (Some(z), _) => InducingGrid::new(z),
            (None, Some(m)) => InducingGrid::spanning(&x, m),
            (None, None) => {
                let mut z = x.clone();
                z.sort_by(f64::total_cmp);
                z.dedup();
                InducingGrid::new(z)
            }
        }
        .map_err(to_py_err)?;
        let algorithm = match algorithm {
            Some(a) => from_py(a)?,
            None => Algorithm::Cvi { rho: 1.0 },
        };
        algorithm.validate().map_err(to_py_err)?;
        let model = TemporalModel {
            kernel: kernel.spec.clone(),
            lik: likelihood.lik.clone(),
            grid,
            x,
            y,
        };
        let log_params = model.initial_params();
        let problem = model.build(&log_params).map_err(to_py_err)?;
        let state = InferenceState::new(&problem).map_err(to_py_err)?;
        Ok(SparseMarkovGP {
            model,
            algorithm,
            log_params,
            problem,
            state,
        })
    }

    /// Sweep sites at fixed hyperparameters until they settle. Returns the
    /// number of sweeps.
    #[pyo3(signature = (max_sweeps=100, tol=1e-8))]
    fn infer(&mut self, py: Python<'_>, max_sweeps: usize, tol: f64) -> PyResult<usize> {
        let (problem, state, alg) = (&self.problem, &mut self.state, &self.algorithm);
        py.detach(|| run_to_convergence(problem, state, alg, max_sweeps, tol))
            .map_err(to_py_err)
    }

    /// `"elbo"`, `"pep_energy"` or `"filter_marglik"`; defaults to the
    /// algorithm's own training objective.
    #[pyo3(signature = (name=None))]
    fn objective(&self, name: Option<&str>) -> PyResult<f64> {
        let obj = match name {
            Some(n) => parse_objective(n)?,
            None => self.algorithm.default_objective(),
        };
        evaluate(
            &self.problem,
            &self.state,
            obj,
            self.algorithm.energy_alpha(),
        )
        .map_err(to_py_err)
    }

    /// Train sites and hyperparameters; returns the objective trace.
    #[pyo3(signature = (iterations=500, learning_rate=0.01, objective=None, fixed=Vec::new()))]
    fn fit(
        &mut self,
        py: Python<'_>,
        iterations: usize,
        learning_rate: f64,
        objective: Option<&str>,
        fixed: Vec<String>,
    ) -> PyResult<Vec<f64>> {
        let config = TrainConfig {
            iterations,
            learning_rate,
            objective: objective.map(parse_objective).transpose()?,
            fixed,
            ..TrainConfig::default()
        };
        let nk = self.model.kernel.log_params().len();
        let start = TemporalModel {
            kernel: self
                .model
                .kernel
                .with_log_params(&self.log_params[..nk])
                .map_err(to_py_err)?,
            lik: self
                .model
                .lik
                .with_log_params(&self.log_params[nk..])
                .map_err(to_py_err)?,
            ..self.model.clone()
        };
        let alg = &self.algorithm;
        let res = py.detach(|| fit(&start, alg, &config)).map_err(to_py_err)?;
        self.log_params = res.log_params;
        self.problem = res.problem;
        self.state = res.state;
        Ok(res.trace.iter().map(|t| t.objective).collect())
    }

    /// Latent predictive `(means, variances)` at `xs`. With one latent these
    /// are flat lists; otherwise one list per point.
    fn predict<'py>(
        &self,
        py: Python<'py>,
        xs: Vec<f64>,
    ) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
        let preds = self.predictions(&xs)?;
        if self.model.lik.latent_dim() == 1 {
            let mean: Vec<f64> = preds.iter().map(|g| g.mean[0]).collect();
            let var: Vec<f64> = preds.iter().map(|g| g.cov[(0, 0)]).collect();
            Ok((
                mean.into_pyobject(py)?.into_any(),
                var.into_pyobject(py)?.into_any(),
            ))
        } else {
            let mean: Vec<Vec<f64>> = preds.iter().map(|g| g.mean.as_slice().to_vec()).collect();
            let var: Vec<Vec<f64>> = preds
                .iter()
                .map(|g| g.cov.diagonal().as_slice().to_vec())
                .collect();
            Ok((
                mean.into_pyobject(py)?.into_any(),
                var.into_pyobject(py)?.into_any(),
            ))
        }
    }

    /// NLPD, RMSE and (for binary data) error rate at held-out points.
    fn score<'py>(
        &self,
        py: Python<'py>,
        xs: Vec<f64>,
        ys: Vec<f64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let preds = self.predictions(&xs)?;
        let m = metrics::evaluate(&self.problem.lik, &preds, &ys).map_err(to_py_err)?;
        to_py(py, &m)
    }

    #[getter]
    fn params(&self) -> BTreeMap<String, f64> {
        self.model
            .param_names()
            .into_iter()
            .zip(self.log_params.iter().map(|p| p.exp()))
            .collect()
    }

    #[getter]
    fn num_inducing(&self) -> usize {
        self.problem.chain.num_inducing()
    }

    /// Scalars held by the tied sites.
    #[getter]
    fn site_storage(&self) -> usize {
        site_storage_len(self.state.sites())
    }
}

impl SparseMarkovGP {
    fn predictions(&self, xs: &[f64]) -> PyResult<Vec<Gaussian>> {
        xs.iter()
            .map(|&x| predict_f(self.state.posterior(), &self.problem.chain, x))
            .collect::<smgp::Result<_>>()
            .map_err(to_py_err)
    }
}

fn parse_objective(name: &str) -> PyResult<Objective> {
    serde_json::from_value(serde_json::Value::String(name.to_string())).map_err(|_| {
        PyValueError::new_err(format!(
            "unknown objective `{name}` (elbo, pep_energy, filter_marglik)"
        ))
    })
}

/// Synthetic dataset as a dict with keys `x`, `r` (spatial rows, possibly
/// empty) and `y`, sorted by `x`.
#[pyfunction]
#[pyo3(name = "generate")]
fn generate_dataset<'py>(
    py: Python<'py>,
    task: &str,
    n: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let d = generate::generate(task, n, seed).map_err(to_py_err)?;
    let mut out = BTreeMap::new();
    out.insert("x", serde_json::to_value(&d.x).unwrap_or_default());
    out.insert("r", serde_json::to_value(&d.r).unwrap_or_default());
    out.insert("y", serde_json::to_value(&d.y).unwrap_or_default());
    to_py(py, &out)
}

#[pymodule]
fn smgp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Kernel>()?;
    m.add_class::<PyLikelihood>()?;
    m.add_class::<SparseMarkovGP>()?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add("TASKS", generate::TASKS.to_vec())?;
    Ok(())
}
