//! Python bindings for `driftlab`.

use driftlab::drift::{self, StreamFunction, StreamKind};
use driftlab::elliptic::{self, ConeSpec, StepRule};
use driftlab::parabolic::{self, GridSpec, Model, SolverConfig};
use driftlab::verify;
use driftlab::{DriftParams, Error};
use pyo3::exceptions::{PyArithmeticError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::CflViolation { .. } | Error::Instability { .. } | Error::Censored { .. } | Error::NonFinite { .. } => {
            PyArithmeticError::new_err(e.to_string())
        }
        Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(x) => match x.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => x.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let list = PyList::empty(py);
            for x in a {
                list.append(json_to_py(py, x)?)?;
            }
            list.into_any()
        }
        Value::Object(m) => {
            let d = PyDict::new(py);
            for (k, x) in m {
                d.set_item(k, json_to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

/// Parameters of the drift family.
#[pyclass(name = "DriftParams", from_py_object)]
#[derive(Clone, Copy)]
struct PyDriftParams {
    inner: DriftParams,
}

#[pymethods]
impl PyDriftParams {
    #[new]
    #[pyo3(signature = (n = 3, lam = 0.5, alpha = 0.1, epsilon = 0.0, big_c = 1.0))]
    fn new(n: usize, lam: f64, alpha: f64, epsilon: f64, big_c: f64) -> PyResult<Self> {
        let inner = DriftParams {
            n,
            lambda: lam,
            alpha,
            epsilon,
            big_c,
        };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon
    }

    #[getter]
    fn big_c(&self) -> f64 {
        self.inner.big_c
    }

    fn with_epsilon(&self, epsilon: f64) -> Self {
        Self {
            inner: self.inner.with_epsilon(epsilon),
        }
    }

    fn with_big_c(&self, big_c: f64) -> Self {
        Self {
            inner: self.inner.with_big_c(big_c),
        }
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!(
            "DriftParams(n={}, lam={}, alpha={}, epsilon={}, big_c={})",
            p.n, p.lambda, p.alpha, p.epsilon, p.big_c
        )
    }
}

/// `(u_r, u_z)` of the steady drift at `(r, z)`.
#[pyfunction]
fn velocity(r: f64, z: f64, params: PyDriftParams) -> PyResult<(f64, f64)> {
    let v = drift::velocity_rz(r, z, &params.inner).map_err(py_err)?;
    Ok((v.u_r, v.u_z))
}

/// Stream function value; `kind` is one of `parabolic`, `truncated`,
/// `ns_core`, `ns` or `ns_truncated`.
#[pyfunction]
#[pyo3(signature = (r, z, params, t = 0.0, kind = "truncated"))]
fn stream(r: f64, z: f64, params: PyDriftParams, t: f64, kind: &str) -> PyResult<f64> {
    let kind = match kind {
        "parabolic" => StreamKind::Parabolic,
        "truncated" => StreamKind::Truncated,
        "ns_core" => StreamKind::NsCore,
        "ns" => StreamKind::Ns,
        "ns_truncated" => StreamKind::NsTruncated,
        other => return Err(PyValueError::new_err(format!("unknown stream kind {other:?}"))),
    };
    StreamFunction::new(kind, params.inner).and_then(|s| s.value(r, z, t)).map_err(py_err)
}

/// Self-similar profile `h(t)`.
#[pyfunction]
fn h_profile(t: f64, alpha: f64) -> PyResult<f64> {
    drift::h_profile(t, alpha).map_err(py_err)
}

/// Time at which `h` reaches `delta`.
#[pyfunction]
fn h_inverse(delta: f64, alpha: f64) -> PyResult<f64> {
    drift::h_inverse(delta, alpha).map_err(py_err)
}

/// Largest certified subsolution radius as a report dict.
#[pyfunction]
#[pyo3(signature = (n = 3, alpha = 0.05, grid = (400, 400)))]
fn certify_subsolution_f<'py>(py: Python<'py>, n: usize, alpha: f64, grid: (usize, usize)) -> PyResult<Bound<'py, PyAny>> {
    let r = verify::certify_subsolution_f(n, alpha, &verify::r0_candidates(), grid).map_err(py_err)?;
    to_py(py, &r)
}

/// Largest certified cone aperture as a report dict.
#[pyfunction]
#[pyo3(signature = (n = 3, alpha = 0.1, grid = (200, 50)))]
fn certify_travel_beta<'py>(py: Python<'py>, n: usize, alpha: f64, grid: (usize, usize)) -> PyResult<Bound<'py, PyAny>> {
    let r = verify::certify_travel_beta(n, alpha, &verify::nu_candidates(), grid).map_err(py_err)?;
    to_py(py, &r)
}

/// Subsolution rate estimate for support radius `r0`.
#[pyfunction]
#[pyo3(signature = (n = 3, r0 = verify::R0, grid = (48, 64, 16)))]
fn certify_c0<'py>(py: Python<'py>, n: usize, r0: f64, grid: (usize, usize, usize)) -> PyResult<Bound<'py, PyAny>> {
    let r = verify::certify_c0(n, r0, grid).map_err(py_err)?;
    to_py(py, &r)
}

/// Runs the parabolic solver and returns the probe series as a dict.
#[pyfunction]
#[pyo3(signature = (params, delta = 0.1, grid = (48, 96, 16), model = "plain", drift = true, records = 100, t_final = None))]
#[allow(clippy::too_many_arguments)]
fn run_parabolic<'py>(
    py: Python<'py>,
    params: PyDriftParams,
    delta: f64,
    grid: (usize, usize, usize),
    model: &str,
    drift: bool,
    records: usize,
    t_final: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let model = match model {
        "plain" => Model::Plain,
        "ns_toy" => Model::NsToy,
        other => return Err(PyValueError::new_err(format!("unknown model {other:?}"))),
    };
    let config = SolverConfig {
        params: params.inner,
        grid: GridSpec::new(grid.0, grid.1, grid.2).map_err(py_err)?,
        model,
        delta,
        drift,
        records,
        t_final,
        ..SolverConfig::default()
    };
    let s = py.detach(|| parabolic::run(&config)).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("rows", to_py(py, &s.rows)?)?;
    d.set_item("steps", s.steps)?;
    d.set_item("initial_max", s.initial_max)?;
    d.set_item("comparison", s.comparison.iter().map(|c| (c[0], c[1])).collect::<Vec<_>>())?;
    d.set_item("comparison_ratio", s.comparison_ratio())?;
    d.set_item("invariant_violations", s.invariant_violations())?;
    Ok(d.into_any())
}

/// Monte Carlo estimate of the exit functional from the probe at height `p2`.
#[pyfunction]
#[pyo3(signature = (p2, params, paths = 10_000, seed = 0))]
fn estimate_v<'py>(py: Python<'py>, p2: f64, params: PyDriftParams, paths: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let p = elliptic::probe_point(p2, params.inner.n);
    let v = py
        .detach(|| elliptic::estimate_v(&p, paths, &params.inner, &StepRule::default(), seed))
        .map_err(py_err)?;
    to_py(py, &v)
}

/// Exit-side statistics of the scaled cone above height `y2`.
#[pyfunction]
#[pyo3(signature = (y2, params, nu = verify::NU0 / 2.0, paths = 10_000, seed = 0))]
fn cone_statistics<'py>(py: Python<'py>, y2: f64, params: PyDriftParams, nu: f64, paths: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let cone = ConeSpec::scaled(nu, y2, params.inner.alpha).map_err(py_err)?;
    let y = elliptic::probe_point(y2, params.inner.n);
    let s = py
        .detach(|| elliptic::exit_side_statistics(&y, &cone, paths, &params.inner, &StepRule::default(), seed))
        .map_err(py_err)?;
    let d = to_py(py, &s)?;
    d.set_item("escape_lower", s.escape_lower())?;
    Ok(d)
}

/// Runs the command-line interface with `args` (without the program name)
/// and returns `(exit_code, stdout, stderr)`.
#[pyfunction]
fn main(py: Python<'_>, args: Vec<String>) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("driftlab".to_string()).chain(args);
    let code = py.detach(|| driftlab::cli::main_with_args(argv, &mut out, &mut err));
    (code, String::from_utf8_lossy(&out).into_owned(), String::from_utf8_lossy(&err).into_owned())
}

#[pymodule]
fn driftlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDriftParams>()?;
    m.add_function(wrap_pyfunction!(velocity, m)?)?;
    m.add_function(wrap_pyfunction!(stream, m)?)?;
    m.add_function(wrap_pyfunction!(h_profile, m)?)?;
    m.add_function(wrap_pyfunction!(h_inverse, m)?)?;
    m.add_function(wrap_pyfunction!(certify_subsolution_f, m)?)?;
    m.add_function(wrap_pyfunction!(certify_travel_beta, m)?)?;
    m.add_function(wrap_pyfunction!(certify_c0, m)?)?;
    m.add_function(wrap_pyfunction!(run_parabolic, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_v, m)?)?;
    m.add_function(wrap_pyfunction!(cone_statistics, m)?)?;
    m.add_function(wrap_pyfunction!(main, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
