//! Python bindings: load and validate scenarios, run them, and read back
//! the metrics report and collected records.

use std::collections::BTreeMap;
use std::path::Path;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use honeyfarm::collection::CollectionDb;
use honeyfarm::report::MetricsReport;
use honeyfarm::scenario::load_scenario;
use honeyfarm::scenario::ScenarioConfig;
use honeyfarm::sim::run_scenario;

fn to_py_err(e: honeyfarm::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A loaded scenario configuration. Seed, tick horizon, and rotation count
/// are adjustable before running.
#[pyclass(name = "Scenario", skip_from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    /// Parses and validates a scenario file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyScenario {
            inner: load_scenario(Path::new(path)).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn max_ticks(&self) -> u64 {
        self.inner.max_ticks
    }

    #[setter]
    fn set_max_ticks(&mut self, max_ticks: u64) {
        self.inner.max_ticks = max_ticks;
    }

    #[getter]
    fn rotation_count(&self) -> u64 {
        self.inner.policy.rotation_count
    }

    #[setter]
    fn set_rotation_count(&mut self, rotation_count: u64) {
        self.inner.policy.rotation_count = rotation_count;
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(to_py_err)
    }

    /// Runs the scenario, writing run.log, collections.jsonl, report.txt,
    /// and report.machine under `out_dir`.
    fn run(&self, out_dir: &str) -> PyResult<PyReport> {
        Ok(PyReport {
            inner: run_scenario(&self.inner, Path::new(out_dir)).map_err(to_py_err)?,
        })
    }
}

/// The end-of-run metrics report.
#[pyclass(name = "Report", skip_from_py_object)]
#[derive(Clone)]
struct PyReport {
    inner: MetricsReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn ticks_run(&self) -> u64 {
        self.inner.ticks_run
    }

    #[getter]
    fn total_records(&self) -> u64 {
        self.inner.total_records
    }

    #[getter]
    fn false_positives(&self) -> u64 {
        self.inner.false_positives
    }

    #[getter]
    fn false_negatives(&self) -> u64 {
        self.inner.false_negatives
    }

    #[getter]
    fn peak_alive_honeypots(&self) -> u64 {
        self.inner.peak_alive_honeypots
    }

    fn distinct_instances(&self, family: &str) -> u64 {
        self.inner
            .per_family_distinct
            .get(family)
            .copied()
            .unwrap_or(0)
    }

    fn per_family_distinct(&self) -> BTreeMap<String, u64> {
        self.inner.per_family_distinct.clone()
    }

    fn per_network_collections(&self) -> BTreeMap<String, u64> {
        self.inner.per_network_collections.clone()
    }

    /// `(template, redo_bytes, disk_bytes, ratio)` rows.
    fn per_template_redo(&self) -> Vec<(String, u64, u64, f64)> {
        self.inner
            .per_template_redo
            .iter()
            .map(|r| (r.template.clone(), r.redo_bytes, r.disk_bytes, r.ratio))
            .collect()
    }

    /// `(tick, inspector_count)` change points.
    fn inspector_timeline(&self) -> Vec<(u64, u32)> {
        self.inner
            .inspector_timeline
            .iter()
            .map(|p| (p.tick, p.inspectors))
            .collect()
    }

    fn to_table(&self) -> String {
        self.inner.to_table()
    }

    fn to_machine(&self) -> String {
        self.inner.to_machine()
    }

    fn __repr__(&self) -> String {
        format!(
            "Report(records={}, fp={}, fn={})",
            self.inner.total_records, self.inner.false_positives, self.inner.false_negatives
        )
    }
}

/// One collected payload instance.
#[pyclass(name = "Record", skip_from_py_object)]
#[derive(Clone)]
struct PyRecord {
    #[pyo3(get)]
    record_id: u64,
    #[pyo3(get)]
    tick: u64,
    #[pyo3(get)]
    network: String,
    #[pyo3(get)]
    inspector: String,
    #[pyo3(get)]
    honeypot: String,
    #[pyo3(get)]
    template: String,
    #[pyo3(get)]
    family: String,
    /// Raw payload bytes.
    #[pyo3(get)]
    payload: Vec<u8>,
}

#[pymethods]
impl PyRecord {
    fn __repr__(&self) -> String {
        format!(
            "Record(id={}, tick={}, network={}, family={}, {} bytes)",
            self.record_id,
            self.tick,
            self.network,
            self.family,
            self.payload.len()
        )
    }
}

/// Validates a scenario file, raising ValueError with the offending field
/// on failure.
#[pyfunction]
fn validate_file(path: &str) -> PyResult<()> {
    load_scenario(Path::new(path)).map(|_| ()).map_err(to_py_err)
}

/// Loads, optionally re-seeds, and runs a scenario file in one call.
#[pyfunction]
#[pyo3(signature = (path, out_dir, seed=None, max_ticks=None))]
fn run_file(path: &str, out_dir: &str, seed: Option<u64>, max_ticks: Option<u64>) -> PyResult<PyReport> {
    let mut scenario = PyScenario::load(path)?;
    if let Some(seed) = seed {
        scenario.inner.seed = seed;
    }
    if let Some(ticks) = max_ticks {
        scenario.inner.max_ticks = ticks;
        scenario.validate()?;
    }
    scenario.run(out_dir)
}

/// Reads every record from a collections.jsonl file.
#[pyfunction]
fn load_records(path: &str) -> PyResult<Vec<PyRecord>> {
    let db = CollectionDb::open(path).map_err(to_py_err)?;
    db.records()
        .iter()
        .map(|r| {
            let payload = hex::decode(&r.payload_bytes)
                .map_err(|e| PyValueError::new_err(format!("bad payload hex: {e}")))?;
            Ok(PyRecord {
                record_id: r.record_id,
                tick: r.tick.0,
                network: r.network_id.to_string(),
                inspector: r.inspector_id.to_string(),
                honeypot: r.honeypot_id.to_string(),
                template: r.template_name.clone(),
                family: r.ground_truth_family.clone(),
                payload,
            })
        })
        .collect()
}

#[pymodule]
fn honeyfarm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyReport>()?;
    m.add_class::<PyRecord>()?;
    m.add_function(wrap_pyfunction!(validate_file, m)?)?;
    m.add_function(wrap_pyfunction!(run_file, m)?)?;
    m.add_function(wrap_pyfunction!(load_records, m)?)?;
    Ok(())
}
