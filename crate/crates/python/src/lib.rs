//! Python bindings: kernels, the GP surrogate, the MLE objective and
//! tuner, acquisition formulas, benchmark functions, and a synchronous
//! `optimize` that calls back into a Python cost function.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use asybo_core::acquisition::{
    expected_improvement, probability_of_improvement, AcquisitionFamily, AcquisitionSpec,
    KappaSchedule,
};
use asybo_core::bench::{BenchName, BenchmarkFn};
use asybo_core::driver::{run, RunConfig};
use asybo_core::evaluator::{EvaluationBackend, InProcessBackend, Status, VirtualClock};
use asybo_core::gp::{GpState, DEFAULT_JITTER};
use asybo_core::hyper::{mle_objective, tune_length_scale, TuneConfig};
use asybo_core::kernel::{KernelFamily, KernelSpec};
use asybo_core::space::Bounds;
use asybo_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) | Error::DuplicatePoint { .. } => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Covariance function `k(x, x')`.
#[pyclass(name = "KernelSpec", module = "asybo", from_py_object)]
#[derive(Clone)]
struct PyKernel {
    inner: KernelSpec,
}

#[pymethods]
impl PyKernel {
    #[new]
    #[pyo3(signature = (family, length_scale, gamma=None, alpha=None, dim=None))]
    fn new(
        family: &str,
        length_scale: &Bound<'_, PyAny>,
        gamma: Option<f64>,
        alpha: Option<f64>,
        dim: Option<usize>,
    ) -> PyResult<Self> {
        let family: KernelFamily = family.parse().map_err(to_py)?;
        let length_scale: Vec<f64> = match length_scale.extract::<f64>() {
            Ok(l) => vec![l],
            Err(_) => length_scale.extract()?,
        };
        let mut k = KernelSpec::new(family, 1.0)
            .and_then(|k| k.set_length_scale(&length_scale))
            .map_err(to_py)?;
        if let Some(g) = gamma {
            k = k.with_gamma(g).map_err(to_py)?;
        }
        if let Some(a) = alpha {
            k = k.with_alpha(a).map_err(to_py)?;
        }
        if let Some(d) = dim {
            k = k.with_dim(d).map_err(to_py)?;
        }
        Ok(PyKernel { inner: k })
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.inner.family().name()
    }

    #[getter]
    fn length_scale(&self) -> Vec<f64> {
        self.inner.length_scale().as_vec()
    }

    fn __call__(&self, a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
        self.inner.eval(&a, &b).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "KernelSpec('{}', {:?})",
            self.inner.family().name(),
            self.inner.length_scale().as_vec()
        )
    }
}

/// Fitted Gaussian-process surrogate.
#[pyclass(name = "GaussianProcess", module = "asybo")]
struct PyGp {
    inner: GpState,
}

#[pymethods]
impl PyGp {
    #[staticmethod]
    #[pyo3(signature = (x, y, kernel, jitter=DEFAULT_JITTER))]
    fn fit(x: Vec<Vec<f64>>, y: Vec<f64>, kernel: PyKernel, jitter: f64) -> PyResult<Self> {
        GpState::fit(x, y, kernel.inner, jitter)
            .map(|inner| PyGp { inner })
            .map_err(to_py)
    }

    /// New surrogate with the extra observations appended.
    fn extend(&self, x: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<Self> {
        self.inner.extend(x, y).map(|inner| PyGp { inner }).map_err(to_py)
    }

    /// Posterior `(mean, variance)` at `x`.
    fn predict(&self, x: Vec<f64>) -> PyResult<(f64, f64)> {
        self.inner
            .predict(&x)
            .map(|p| (p.mean, p.variance))
            .map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// MLE objective as `(value, fit_term, complexity_term)`.
#[pyfunction(name = "mle_objective")]
#[pyo3(signature = (x, y, kernel, jitter=DEFAULT_JITTER))]
fn py_mle(x: Vec<Vec<f64>>, y: Vec<f64>, kernel: PyKernel, jitter: f64) -> PyResult<(f64, f64, f64)> {
    let r = mle_objective(&x, &y, &kernel.inner, jitter).map_err(to_py)?;
    Ok((r.value, r.fit_term, r.complexity_term))
}

#[pyfunction(name = "tune_length_scale")]
#[pyo3(signature = (x, y, kernel, jitter=DEFAULT_JITTER, budget=40, seed=0))]
fn py_tune(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    kernel: PyKernel,
    jitter: f64,
    budget: usize,
    seed: u64,
) -> PyResult<PyKernel> {
    let cfg = TuneConfig {
        gate_n: Some(2),
        budget,
        seed,
        ..TuneConfig::default()
    };
    tune_length_scale(&x, &y, &kernel.inner, jitter, &cfg)
        .map(|inner| PyKernel { inner })
        .map_err(to_py)
}

#[pyfunction]
fn lower_confidence_bound(mu: f64, sigma: f64, kappa: f64) -> f64 {
    mu - kappa * sigma
}

#[pyfunction(name = "probability_of_improvement")]
fn py_pi(mu: f64, sigma: f64, f_min: f64) -> f64 {
    probability_of_improvement(mu, sigma, f_min)
}

#[pyfunction(name = "expected_improvement")]
fn py_ei(mu: f64, sigma: f64, f_min: f64) -> f64 {
    expected_improvement(mu, sigma, f_min)
}

/// Evaluate a named benchmark function at `x`.
#[pyfunction]
fn bench_eval(name: &str, x: Vec<f64>) -> PyResult<f64> {
    let name: BenchName = name.parse().map_err(to_py)?;
    BenchmarkFn::new(name, x.len())
        .and_then(|f| f.eval(&x))
        .map_err(to_py)
}

/// Minimize `f` over the box `bounds` (a list of `(lo, hi)` pairs).
///
/// Exceptions raised by `f`, or non-numeric return values, mark that
/// evaluation as failed. Returns a dict with `best_x`, `best_value` and
/// `history` (a list of `(x, value_or_None, status)` tuples).
#[pyfunction]
#[pyo3(signature = (
    f, bounds, max_evals=50, batch_k=1, seed=0, n_init=None,
    acquisition="lcb", kappa0=3.0, decay=0.95, kernel=None, tune=true
))]
#[allow(clippy::too_many_arguments)]
fn optimize<'py>(
    py: Python<'py>,
    f: Py<PyAny>,
    bounds: Vec<(f64, f64)>,
    max_evals: usize,
    batch_k: usize,
    seed: u64,
    n_init: Option<usize>,
    acquisition: &str,
    kappa0: f64,
    decay: f64,
    kernel: Option<PyKernel>,
    tune: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let (lo, hi): (Vec<f64>, Vec<f64>) = bounds.into_iter().unzip();
    let bounds = Bounds::new(lo, hi).map_err(to_py)?;
    let mut cfg = RunConfig::new(bounds);
    cfg.max_evals = max_evals;
    cfg.batch_k = batch_k;
    cfg.seed = seed;
    if let Some(n) = n_init {
        cfg.n_init = n;
    }
    let family: AcquisitionFamily = acquisition.parse().map_err(to_py)?;
    cfg.acq = AcquisitionSpec::new(family, KappaSchedule::Annealing { kappa0, decay });
    if let Some(k) = kernel {
        cfg.kernel = k.inner.with_dim(cfg.dim()).map_err(to_py)?;
    }
    cfg.hyper.enabled = tune;

    let backend: Arc<dyn EvaluationBackend> = Arc::new(InProcessBackend::synchronous(move |x: &[f64]| {
        Python::attach(|py| {
            f.call1(py, (x.to_vec(),))
                .and_then(|r| r.bind(py).extract::<f64>())
                .unwrap_or(f64::NAN)
        })
    }));
    let state = run(cfg, backend, Arc::new(VirtualClock::new())).map_err(to_py)?;

    let out = PyDict::new(py);
    match state.best() {
        Some((x, v)) => {
            out.set_item("best_x", x)?;
            out.set_item("best_value", v)?;
        }
        None => {
            out.set_item("best_x", py.None())?;
            out.set_item("best_value", py.None())?;
        }
    }
    let history: Vec<(Vec<f64>, Option<f64>, &str)> = state
        .history
        .iter()
        .map(|r| {
            let v = match r.status {
                Status::Completed(v) => Some(v),
                _ => None,
            };
            (r.x.clone(), v, r.status.label())
        })
        .collect();
    out.set_item("history", history)?;
    Ok(out)
}

#[pymodule]
fn asybo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKernel>()?;
    m.add_class::<PyGp>()?;
    m.add_function(wrap_pyfunction!(py_mle, m)?)?;
    m.add_function(wrap_pyfunction!(py_tune, m)?)?;
    m.add_function(wrap_pyfunction!(lower_confidence_bound, m)?)?;
    m.add_function(wrap_pyfunction!(py_pi, m)?)?;
    m.add_function(wrap_pyfunction!(py_ei, m)?)?;
    m.add_function(wrap_pyfunction!(bench_eval, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    Ok(())
}
