//! Python bindings. Structured results come back as plain dicts and lists.

use std::fs::File;
use std::io::BufReader;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use dcsim_core::ces::{self, CesConfig, EnergyModel};
use dcsim_core::pipeline::{build_policy, train_with_cutoff, EstimatorSource};
use dcsim_core::predictor::{self, DurationModel, DurationModelConfig, RollingConfig};
use dcsim_core::sched::{PolicyConfig, PolicyKind};
use dcsim_core::sim::{compute_metrics, run_simulation, SimOptions};
use dcsim_core::trace::{self, ClusterSpec, JobRecord, SynthParams};

fn err(e: dcsim_core::Error) -> PyErr {
    match e {
        dcsim_core::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Round-trips through JSON so nested structs arrive as dicts.
fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn read_jobs(path: &str) -> PyResult<Vec<JobRecord>> {
    let f = File::open(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
    Ok(trace::parse_job_log(BufReader::new(f)).map_err(err)?.jobs)
}

fn read_cluster(path: &str) -> PyResult<ClusterSpec> {
    let text =
        std::fs::read_to_string(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
    ClusterSpec::from_json(&text).map_err(err)
}

#[pyfunction]
fn levenshtein(a: &str, b: &str) -> usize {
    predictor::levenshtein(a, b)
}

#[pyfunction]
#[pyo3(signature = (avg_sleeping_nodes, hours, idle_node_watts = 800.0, cooling_multiplier = 2.0))]
fn energy_savings(
    avg_sleeping_nodes: f64,
    hours: f64,
    idle_node_watts: f64,
    cooling_multiplier: f64,
) -> f64 {
    ces::energy_savings(
        avg_sleeping_nodes,
        hours,
        &EnergyModel {
            idle_node_watts,
            cooling_multiplier,
        },
    )
}

#[pyfunction]
fn smape(actual: Vec<f64>, forecast: Vec<f64>) -> PyResult<f64> {
    ces::smape(&actual, &forecast).map_err(err)
}

#[pyfunction]
fn job_arrival_check(active: u32, request: u32, sigma: u32) -> u32 {
    ces::job_arrival_check(active, request, sigma)
}

/// Target active nodes, or None when the trends do not call for sleeping.
#[pyfunction]
#[pyo3(signature = (running_before, running, forecast, sigma = 3, xi_history = 2.0, xi_prediction = 2.0))]
fn periodic_check(
    running_before: u32,
    running: u32,
    forecast: Vec<f64>,
    sigma: u32,
    xi_history: f64,
    xi_prediction: f64,
) -> Option<u32> {
    let cfg = CesConfig {
        sigma,
        xi_history,
        xi_prediction,
        ..CesConfig::default()
    };
    let horizon = forecast.len();
    ces::periodic_check(running_before, running, &forecast, horizon, &cfg)
}

/// Writes a synthetic job log to `path` and returns the number of jobs.
#[pyfunction]
#[pyo3(signature = (path, jobs = 1000, days = 7, seed = 0))]
fn synth_trace(path: &str, jobs: usize, days: u32, seed: u64) -> PyResult<usize> {
    let params = SynthParams {
        job_count: jobs,
        span_days: days,
        seed,
        ..Default::default()
    };
    let records = trace::synth_trace(&params).map_err(err)?;
    let f = File::create(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
    trace::write_job_log(&records, f).map_err(err)?;
    Ok(records.len())
}

#[pyfunction]
fn trace_summary<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyAny>> {
    let jobs = read_jobs(path)?;
    to_py(py, &dcsim_core::analytics::trace_summary(&jobs))
}

/// Replays a canonical job log on a JSON cluster spec. QSSF uses true
/// durations unless `model` holds a model JSON string from `train_model`.
#[pyfunction]
#[pyo3(signature = (trace_path, cluster_path, policy = "fifo", lam = 0.5, model = None, queue_threshold = 0))]
fn simulate<'py>(
    py: Python<'py>,
    trace_path: &str,
    cluster_path: &str,
    policy: &str,
    lam: f64,
    model: Option<&str>,
    queue_threshold: i64,
) -> PyResult<Bound<'py, PyAny>> {
    let jobs = read_jobs(trace_path)?;
    let cluster = read_cluster(cluster_path)?;
    let kind: PolicyKind = policy.parse().map_err(err)?;
    let source = match model {
        Some(m) => EstimatorSource::Learned {
            model: DurationModel::from_json(m).map_err(err)?,
            history: Vec::new(),
            rolling: RollingConfig::default(),
        },
        None => EstimatorSource::Perfect,
    };
    let cfg = PolicyConfig {
        lambda: lam,
        ..PolicyConfig::new(kind)
    };
    let mut p = build_policy(&cfg, &source).map_err(err)?;
    let result = py
        .allow_threads(|| run_simulation(&jobs, &cluster, &mut p, &SimOptions::default()))
        .map_err(err)?;
    let metrics = compute_metrics(&result, queue_threshold);
    let out = PyDict::new(py);
    out.set_item("metrics", to_py(py, &metrics)?)?;
    out.set_item("jobs", to_py(py, &result.jobs)?)?;
    Ok(out.into_any())
}

/// Trains on jobs finished by `cutoff`. Returns (model JSON, validation report or None).
#[pyfunction]
#[pyo3(signature = (trace_path, cutoff, rounds = 200))]
fn train_model<'py>(
    py: Python<'py>,
    trace_path: &str,
    cutoff: i64,
    rounds: usize,
) -> PyResult<(String, Bound<'py, PyAny>)> {
    let jobs = read_jobs(trace_path)?;
    let mut cfg = DurationModelConfig::default();
    cfg.gbdt.rounds = rounds;
    let (model, outcome) = train_with_cutoff(&jobs, cutoff, &cfg).map_err(err)?;
    Ok((model.to_json().map_err(err)?, to_py(py, &outcome.report)?))
}

#[pymodule]
fn dcsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(levenshtein, m)?)?;
    m.add_function(wrap_pyfunction!(energy_savings, m)?)?;
    m.add_function(wrap_pyfunction!(smape, m)?)?;
    m.add_function(wrap_pyfunction!(job_arrival_check, m)?)?;
    m.add_function(wrap_pyfunction!(periodic_check, m)?)?;
    m.add_function(wrap_pyfunction!(synth_trace, m)?)?;
    m.add_function(wrap_pyfunction!(trace_summary, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
