//! Python bindings: scenario templates, runs, sweeps and the standalone
//! acoustic and availability calculators. Reports cross the boundary as
//! plain dicts and lists.

use std::collections::HashMap;
use std::path::PathBuf;

use linewatch::acoustic::localize;
use linewatch::availability::{compare_configurations, ComponentChain};
use linewatch::scenario::{run_scenario, sweep, write_run_outputs, RunOutput, RunStatus, SweepGrid, SweepSummary};
use linewatch::{Error, Scenario, ScenarioTemplate};
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyTypeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyString};

create_exception!(
    pylinewatch,
    ConfigError,
    PyValueError,
    "Invalid scenario configuration."
);

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config { .. } => ConfigError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Serializes through JSON so Python receives dicts and lists.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn to_toml(obj: &Bound<'_, PyAny>) -> PyResult<toml::Value> {
    if obj.is_instance_of::<PyBool>() {
        return Ok(toml::Value::Boolean(obj.extract()?));
    }
    if obj.is_instance_of::<PyString>() {
        return Ok(toml::Value::String(obj.extract()?));
    }
    if let Ok(i) = obj.extract::<i64>() {
        return Ok(toml::Value::Integer(i));
    }
    if let Ok(f) = obj.extract::<f64>() {
        return Ok(toml::Value::Float(f));
    }
    if obj.is_instance_of::<PyDict>() {
        let map: HashMap<String, Bound<'_, PyAny>> = obj.extract()?;
        let mut t = toml::Table::new();
        for (k, v) in map {
            t.insert(k, to_toml(&v)?);
        }
        return Ok(toml::Value::Table(t));
    }
    if let Ok(items) = obj.extract::<Vec<Bound<'_, PyAny>>>() {
        return Ok(toml::Value::Array(items.iter().map(to_toml).collect::<PyResult<_>>()?));
    }
    Err(PyTypeError::new_err(format!(
        "cannot use {} as a scenario value",
        obj.get_type().name()?
    )))
}

/// Editable scenario document. Keys are dotted paths such as
/// `"leaks.0.rate"`; values may carry units, e.g. `"2 h"`.
#[pyclass(name = "ScenarioTemplate", module = "pylinewatch", from_py_object)]
#[derive(Clone)]
struct PyTemplate {
    inner: ScenarioTemplate,
}

#[pymethods]
impl PyTemplate {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyTemplate {
            inner: ScenarioTemplate::load(path).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(PyTemplate {
            inner: ScenarioTemplate::parse(text).map_err(py_err)?,
        })
    }

    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        self.inner.set(key, to_toml(value)?).map_err(py_err)
    }

    /// A modified copy; the receiver is unchanged.
    fn with_(&self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<Self> {
        let mut t = self.clone();
        t.set(key, value)?;
        Ok(t)
    }

    fn remove(&mut self, key: &str) -> PyResult<bool> {
        Ok(self.inner.remove(key).map_err(py_err)?.is_some())
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn canonical(&self) -> String {
        self.inner.canonical()
    }

    fn build(&self) -> PyResult<PyScenario> {
        Ok(PyScenario {
            inner: self.inner.build().map_err(py_err)?,
        })
    }
}

/// A validated scenario, ready to run.
#[pyclass(name = "Scenario", module = "pylinewatch", frozen)]
struct PyScenario {
    inner: Scenario,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyScenario {
            inner: Scenario::load(path).map_err(py_err)?,
        })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn config_hash(&self) -> &str {
        &self.inner.config_hash
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.model.node_count()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon
    }

    #[getter]
    fn poll_interval(&self) -> f64 {
        self.inner.poll_interval
    }

    #[getter]
    fn instruments(&self) -> Vec<String> {
        self.inner.instruments().iter().map(|i| i.id.clone()).collect()
    }

    #[getter]
    fn leaks<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.leaks)
    }

    /// Initial steady state: dict of per-node `x`, `pressure`,
    /// `mass_flow` and `temperature`.
    fn steady_state<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let s = &self.inner;
        let st = s
            .model
            .steady_state(&s.boundary, 0.0, &s.leaks, &s.solver)
            .map_err(py_err)?;
        let profile = s.model.modeled_profile(&st);
        let d = PyDict::new(py);
        d.set_item("x", s.model.grid.node_positions.clone())?;
        d.set_item("pressure", profile.pressure)?;
        d.set_item("mass_flow", profile.mass_flow)?;
        d.set_item("temperature", st.temp.clone())?;
        Ok(d.into_any())
    }

    /// Runs the scenario with the GIL released.
    fn run(&self, py: Python<'_>) -> PyResult<PyRun> {
        let out = py.detach(|| run_scenario(&self.inner)).map_err(py_err)?;
        Ok(PyRun {
            scenario: self.inner.clone(),
            output: out,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario({:?}, {} nodes, hash {})",
            self.inner.name,
            self.node_count(),
            &self.inner.config_hash[..12]
        )
    }
}

/// Result of one run.
#[pyclass(name = "RunResult", module = "pylinewatch", frozen)]
struct PyRun {
    scenario: Scenario,
    output: RunOutput,
}

#[pymethods]
impl PyRun {
    #[getter]
    fn completed(&self) -> bool {
        self.output.report.status == RunStatus::Completed
    }

    #[getter]
    fn declared_time(&self) -> Option<f64> {
        self.output.report.rtm.as_ref().and_then(|r| r.verdict.declared_time)
    }

    /// The full report as nested dicts.
    fn report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.output.report)
    }

    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.output.report.metrics)
    }

    /// Filtered telemetry as `(poll_time, id, value or None, quality)`.
    fn telemetry(&self) -> Vec<(f64, String, Option<f64>, &'static str)> {
        self.output
            .telemetry
            .iter()
            .flat_map(|f| {
                f.readings
                    .iter()
                    .map(|r| (f.poll_time, r.id.clone(), r.value, r.quality.as_str()))
            })
            .collect()
    }

    /// Writes report.json and the CSV files; returns the paths.
    fn write(&self, dir: PathBuf) -> PyResult<Vec<PathBuf>> {
        write_run_outputs(&dir, &self.scenario, &self.output).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

/// Runs a TOML grid (`[[parameter]]` tables of `path` and `values`) over a
/// template. Returns `(rows, summary)`.
#[pyfunction(name = "sweep")]
fn py_sweep<'py>(
    py: Python<'py>,
    template: &PyTemplate,
    grid: &str,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let grid = SweepGrid::parse(grid).map_err(py_err)?;
    let rows = py.detach(|| sweep(&template.inner, &grid));
    Ok((to_py(py, &rows)?, to_py(py, &SweepSummary::of(&rows))?))
}

/// Leak position from arrival times at two sensors `x1 < x2`.
#[pyfunction(name = "localize")]
fn py_localize(x1: f64, t1: f64, x2: f64, t2: f64, speed: f64) -> PyResult<f64> {
    Ok(localize(x1, t1, x2, t2, speed).map_err(py_err)?.position)
}

/// Ranking of the three reference alarm chains at unit availability `a`.
#[pyfunction]
fn availability_presets<'py>(py: Python<'py>, a: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(
        py,
        &compare_configurations(&ComponentChain::presets(a)).map_err(py_err)?,
    )
}

#[pymodule]
pub fn pylinewatch(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTemplate>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRun>()?;
    m.add_function(wrap_pyfunction!(py_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(py_localize, m)?)?;
    m.add_function(wrap_pyfunction!(availability_presets, m)?)?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
