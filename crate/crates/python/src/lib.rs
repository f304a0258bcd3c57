//! Python bindings: penalties, smoothed check loss, scenario generation and
//! experiment runs. Structured results cross the boundary as JSON and are
//! decoded with Python's `json` module.

use fspg::harness::{self, Algorithm, RunConfig};
use fspg::{datagen, smoothloss, Error, PenaltyConfig, PenaltyKind, SmoothingParam};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Convexity { .. } | Error::Ingest { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_name<T: DeserializeOwned>(what: &str, name: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(name.to_owned()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} {name:?}")))
}

fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A sparsity penalty: "MCP", "SCAD", "L1" or "None".
#[pyclass(name = "Penalty", frozen)]
struct PyPenalty(PenaltyConfig);

#[pymethods]
impl PyPenalty {
    #[new]
    #[pyo3(signature = (kind, lam = 0.0, gamma = 0.0))]
    fn new(kind: &str, lam: f64, gamma: f64) -> PyResult<Self> {
        let kind: PenaltyKind = parse_name("penalty", kind)?;
        PenaltyConfig::new(kind, lam, gamma).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn standard(kind: &str) -> PyResult<Self> {
        Ok(Self(harness::standard_penalty(parse_name("penalty", kind)?)))
    }

    #[getter]
    fn kind(&self) -> String {
        match serde_json::to_value(self.0.kind()) {
            Ok(serde_json::Value::String(s)) => s,
            _ => unreachable!("penalty kinds serialize as strings"),
        }
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.0.lambda()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.0.gamma()
    }

    /// Weak-convexity modulus.
    #[getter]
    fn rho(&self) -> f64 {
        self.0.rho().value()
    }

    fn value(&self, w: f64) -> f64 {
        self.0.value(w)
    }

    /// `argmin_w t*g(w) + (w - a)^2 / 2`.
    fn prox(&self, a: f64, t: f64) -> PyResult<f64> {
        self.0.prox(a, t).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Penalty({:?}, lam={}, gamma={})", self.kind(), self.0.lambda(), self.0.gamma())
    }
}

#[pyfunction]
fn check_loss(u: f64, tau: f64) -> PyResult<f64> {
    smoothloss::check_loss(u, tau).map_err(py_err)
}

/// Huber-smoothed absolute value.
#[pyfunction]
fn smooth_abs(u: f64, mu: f64) -> PyResult<f64> {
    Ok(smoothloss::smooth_abs(u, SmoothingParam::new(mu).map_err(py_err)?))
}

/// `tau`-quantile of the equal-weight mixture of `N(0, s^2)` over `scales`.
#[pyfunction]
fn mixture_quantile(scales: Vec<f64>, tau: f64) -> PyResult<f64> {
    datagen::mixture_quantile(&scales, tau).map_err(py_err)
}

/// Generates a scenario from a JSON spec. Returns `(clients, truth)` where each
/// client is a dict with `client_id`, `features` (rows, trailing ones column)
/// and `responses`.
#[pyfunction]
fn generate_scenario<'py>(py: Python<'py>, spec_json: &str) -> PyResult<(Vec<Bound<'py, PyAny>>, Bound<'py, PyAny>)> {
    let spec: datagen::ScenarioSpec =
        serde_json::from_str(spec_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let (data, truth) = datagen::generate_scenario(&spec).map_err(py_err)?;
    let clients = data
        .iter()
        .map(|d| {
            let rows: Vec<Vec<f64>> = d.features().row_iter().map(|r| r.iter().copied().collect()).collect();
            let client = serde_json::json!({
                "client_id": d.client_id(),
                "features": rows,
                "responses": d.responses().as_slice(),
            });
            to_py(py, &client)
        })
        .collect::<PyResult<_>>()?;
    Ok((clients, to_py(py, &truth)?))
}

/// JSON config for a named preset.
#[pyfunction]
#[pyo3(signature = (name, algorithm = "FSPG", penalty = "MCP", tau = 0.55, seed = 0))]
fn preset_config(name: &str, algorithm: &str, penalty: &str, tau: f64, seed: u64) -> PyResult<String> {
    let alg: Algorithm = parse_name("algorithm", algorithm)?;
    let cfg = harness::preset_config(name, alg, parse_name("penalty", penalty)?, tau, seed).map_err(py_err)?;
    serde_json::to_string(&cfg).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Runs an experiment from a JSON config. Returns a dict with `records` (one
/// dict per recorded iterate) and `final_model` (coefficients, then intercept).
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config_json: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg = RunConfig::from_json(config_json).map_err(py_err)?;
    let out = py.detach(|| harness::run_experiment(&cfg)).map_err(py_err)?;
    to_py(
        py,
        &serde_json::json!({
            "records": out.records,
            "final_model": out.final_model.as_slice(),
        }),
    )
}

#[pymodule]
fn pyfspg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPenalty>()?;
    m.add_function(wrap_pyfunction!(check_loss, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_abs, m)?)?;
    m.add_function(wrap_pyfunction!(mixture_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(preset_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
