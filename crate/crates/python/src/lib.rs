//! Python bindings: fixtures, flow integration, stopping rules, the inner
//! maps and the experiment runner.

use std::path::PathBuf;

use ndarray::Array1;
use numpy::{IntoPyArray, PyArray1, PyArray2, PyReadonlyArray1, PyReadonlyArray2};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use dualflow::cli::{run_experiment as run_experiment_core, ConfigFile, ExperimentConfig, Overrides};
use dualflow::flow::{default_dt, integrate as integrate_core, Control, IntegrateConfig, Scheme};
use dualflow::operator::{Grid, WeightedVector};
use dualflow::problems::{self, TOMOGRAPHY_DESK};
use dualflow::regularizer::{softmax_map, tv_prox_alternating};
use dualflow::rules::{run_rules as run_rules_core, Rule};

fn py_err(e: dualflow::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A forward problem with noisy data and, for the fixtures, a known truth.
#[pyclass(name = "Problem", module = "dualflow_py", frozen)]
struct PyProblem {
    inner: problems::Problem,
}

#[pymethods]
impl PyProblem {
    /// Gaussian-kernel deconvolution on `grid_n` nodes with absolute noise `delta`.
    #[staticmethod]
    #[pyo3(signature = (grid_n = 801, delta = 1e-2, seed = 0))]
    fn deconvolution(grid_n: usize, delta: f64, seed: u64) -> PyResult<Self> {
        let inner = problems::gaussian_deconvolution_fixture(grid_n, delta, seed).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Parallel-beam tomography of the Shepp-Logan phantom with relative noise.
    #[staticmethod]
    #[pyo3(signature = (
        image_n = TOMOGRAPHY_DESK.0,
        n_angles = TOMOGRAPHY_DESK.1,
        n_detectors = TOMOGRAPHY_DESK.2,
        delta_rel = 1e-2,
        seed = 0
    ))]
    fn tomography(
        image_n: usize,
        n_angles: usize,
        n_detectors: usize,
        delta_rel: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let inner = problems::shepp_logan_fixture(image_n, n_angles, n_detectors, delta_rel, seed)
            .map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta
    }

    /// `(rows, cols)` of the forward operator.
    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.inner.op.shape()
    }

    #[getter]
    fn image_shape(&self) -> Option<(usize, usize)> {
        self.inner.image_shape
    }

    /// Step size used by the presets, or 0.9 times the stability bound.
    #[getter]
    fn default_dt(&self) -> f64 {
        default_dt(&self.inner)
    }

    #[getter]
    fn data<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray1<f64>> {
        self.inner.data.values().clone().into_pyarray(py)
    }

    #[getter]
    fn truth<'py>(&self, py: Python<'py>) -> Option<Bound<'py, PyArray1<f64>>> {
        self.inner.truth.as_ref().map(|t| t.values().clone().into_pyarray(py))
    }

    /// Relative error of `x` against the truth, if the truth is known.
    fn relative_error(&self, x: PyReadonlyArray1<'_, f64>) -> PyResult<Option<f64>> {
        let x = WeightedVector::new(x.as_array().to_owned(), self.inner.op.domain().clone())
            .map_err(py_err)?;
        Ok(self.inner.relative_error(&x))
    }

    fn __repr__(&self) -> String {
        let (m, n) = self.inner.op.shape();
        format!("Problem(shape=({m}, {n}), delta={:e})", self.inner.delta)
    }
}

fn integrate_config(
    problem: &problems::Problem,
    scheme: &str,
    dt: Option<f64>,
    t_max: Option<f64>,
    max_steps: Option<usize>,
) -> PyResult<IntegrateConfig> {
    let scheme: Scheme = scheme.parse().map_err(py_err)?;
    let mut cfg = IntegrateConfig::new(scheme, dt.unwrap_or_else(|| default_dt(problem)))
        .with_keep_states(None);
    if let Some(t) = t_max {
        cfg = cfg.with_t_max(t);
    }
    if let Some(n) = max_steps {
        cfg = cfg.with_max_steps(n);
    }
    if t_max.is_none() && max_steps.is_none() {
        return Err(PyValueError::new_err("give t_max or max_steps"));
    }
    Ok(cfg)
}

/// Integrates the dual flow; returns the trace columns and the final state.
#[pyfunction]
#[pyo3(signature = (problem, scheme = "rk4", dt = None, t_max = None, max_steps = None))]
fn integrate<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    scheme: &str,
    dt: Option<f64>,
    t_max: Option<f64>,
    max_steps: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let p = &problem.inner;
    let cfg = integrate_config(p, scheme, dt, t_max, max_steps)?;
    let traj = integrate_core(p, &cfg, |_, _| Ok(Control::Continue)).map_err(py_err)?;
    let column = |f: &dyn Fn(&dualflow::diagnostics::TraceRecord) -> f64| {
        Array1::from_iter(traj.records.iter().map(f))
    };
    let out = PyDict::new(py);
    out.set_item("t", column(&|r| r.t).into_pyarray(py))?;
    out.set_item("residual_norm", column(&|r| r.residual_norm).into_pyarray(py))?;
    out.set_item("r_value", column(&|r| r.r_value).into_pyarray(py))?;
    out.set_item("dual_objective", column(&|r| r.dual_objective).into_pyarray(py))?;
    out.set_item("theta", column(&|r| r.theta).into_pyarray(py))?;
    out.set_item(
        "relative_error",
        column(&|r| r.relative_error.unwrap_or(f64::NAN)).into_pyarray(py),
    )?;
    out.set_item("steps", traj.steps)?;
    out.set_item("x", traj.final_state.x.values().clone().into_pyarray(py))?;
    out.set_item("lam", traj.final_state.lambda.values().clone().into_pyarray(py))?;
    Ok(out)
}

/// Runs several stopping rules on one integration. `rules` is a list of
/// dicts such as `{"rule": "dp", "tau": 1.1}` or `{"rule": "hdp", "a": 0.1}`.
#[pyfunction]
#[pyo3(signature = (problem, rules, scheme = "rk4", dt = None, t_max = 1e4, max_steps = None))]
fn run_rules<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    rules: &Bound<'py, PyList>,
    scheme: &str,
    dt: Option<f64>,
    t_max: Option<f64>,
    max_steps: Option<usize>,
) -> PyResult<Bound<'py, PyList>> {
    let p = &problem.inner;
    let json: String = py.import("json")?.call_method1("dumps", (rules,))?.extract()?;
    let rules: Vec<Rule> =
        serde_json::from_str(&json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    for r in &rules {
        r.validate().map_err(py_err)?;
    }
    let cfg = integrate_config(p, scheme, dt, t_max, max_steps)?;
    let (outcomes, _) = run_rules_core(p, &rules, &cfg).map_err(py_err)?;
    let list = PyList::empty(py);
    for o in outcomes {
        let d = PyDict::new(py);
        d.set_item("label", o.rule.label())?;
        d.set_item("kind", format!("{:?}", o.kind).to_lowercase())?;
        d.set_item("t_stop", o.t_stop)?;
        d.set_item("relative_error", o.relative_error)?;
        d.set_item("delta_star", o.delta_star)?;
        d.set_item("kappa_hat", o.kappa_hat)?;
        d.set_item("theta_min", o.theta_min)?;
        d.set_item("x", o.state.x.values().clone().into_pyarray(py))?;
        list.append(d)?;
    }
    Ok(list)
}

/// Normalized exponential on a weighted grid; unit weights by default.
#[pyfunction]
#[pyo3(signature = (xi, weights = None))]
fn softmax<'py>(
    py: Python<'py>,
    xi: PyReadonlyArray1<'py, f64>,
    weights: Option<PyReadonlyArray1<'py, f64>>,
) -> PyResult<Bound<'py, PyArray1<f64>>> {
    let values = xi.as_array().to_owned();
    let grid = match weights {
        Some(w) => Grid::new(w.as_array().to_owned()).map_err(py_err)?,
        None => Grid::unit(values.len().max(1)),
    };
    let v = WeightedVector::new(values, grid).map_err(py_err)?;
    Ok(softmax_map(&v).into_values().into_pyarray(py))
}

/// Anisotropic TV denoising `argmin_z 1/2 |z - v|^2 + beta TV(z)`; returns
/// `(z, gap, iterations)`.
#[pyfunction]
#[pyo3(signature = (v, beta, tol = 1e-10, max_iter = 20_000))]
fn tv_prox<'py>(
    py: Python<'py>,
    v: PyReadonlyArray2<'py, f64>,
    beta: f64,
    tol: f64,
    max_iter: usize,
) -> PyResult<(Bound<'py, PyArray2<f64>>, f64, usize)> {
    let out = tv_prox_alternating(&v.as_array().to_owned(), beta, tol, max_iter, None)
        .map_err(py_err)?;
    Ok((out.image.into_pyarray(py), out.gap, out.iterations))
}

/// Runs an experiment from TOML text into `out`; returns the number of
/// failed cells.
#[pyfunction]
#[pyo3(signature = (config_toml, out, jobs = None))]
fn run_experiment(config_toml: &str, out: PathBuf, jobs: Option<usize>) -> PyResult<usize> {
    let file = ConfigFile::parse(config_toml).map_err(py_err)?;
    let overrides = Overrides {
        out: Some(out),
        ..Overrides::default()
    };
    let cfg = ExperimentConfig::resolve(Some(file), &overrides).map_err(py_err)?;
    let manifest = run_experiment_core(&cfg, jobs).map_err(py_err)?;
    Ok(manifest.failed_cells())
}

#[pymodule]
fn dualflow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(integrate, m)?)?;
    m.add_function(wrap_pyfunction!(run_rules, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(tv_prox, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
