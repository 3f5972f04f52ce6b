//! Python bindings: model arithmetic, the aggregation rules, attack helpers
//! and whole experiments driven by config files.

use fedfilter::adversary::{self, AttackKind, AttackSpec, GammaSchedule};
use fedfilter::aggregation::{self, AggregationInput, AggregatorConfig, Rule};
use fedfilter::linalg;
use fedfilter::report::WriteOptions;
use fedfilter::runner::{load_config, run_to_dir, RunOverrides};
use fedfilter::simulator::{Experiment, RoundRecord};
use fedfilter::{Error, ModelVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config { .. }
        | Error::DimensionMismatch { .. }
        | Error::ShapeMismatch { .. }
        | Error::Empty(_)
        | Error::NonFinite { .. }
        | Error::InvalidWeights(_)
        | Error::Precondition(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn vector(values: Vec<f64>) -> Result<ModelVector, Error> {
    ModelVector::from_values(values)
}

fn vectors(models: Vec<Vec<f64>>) -> Result<Vec<ModelVector>, Error> {
    models.into_iter().map(vector).collect()
}

#[pyfunction]
fn mean_model(models: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let models = vectors(models).map_err(to_py)?;
    Ok(linalg::mean_model(&models).map_err(to_py)?.into_values())
}

#[pyfunction]
fn weighted_sum(models: Vec<Vec<f64>>, weights: Vec<f64>) -> PyResult<Vec<f64>> {
    let models = vectors(models).map_err(to_py)?;
    Ok(linalg::weighted_sum(&models, &weights).map_err(to_py)?.into_values())
}

#[pyfunction]
fn mse(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    linalg::mse(&vector(a).map_err(to_py)?, &vector(b).map_err(to_py)?).map_err(to_py)
}

#[pyfunction]
fn euclidean_distance(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    linalg::euclidean_distance(&vector(a).map_err(to_py)?, &vector(b).map_err(to_py)?).map_err(to_py)
}

/// Aggregates `models` with `rule`; returns `aggregate`, `client_weights` and `iterations`.
#[pyfunction]
#[pyo3(signature = (models, rule = "simeon", f_bound = 0, epsilon = 1e-7, max_iterations = 200, prev_estimate = None, round = 0, data_sizes = None))]
#[allow(clippy::too_many_arguments)]
fn aggregate<'py>(
    py: Python<'py>,
    models: Vec<Vec<f64>>,
    rule: &str,
    f_bound: usize,
    epsilon: f64,
    max_iterations: usize,
    prev_estimate: Option<Vec<f64>>,
    round: usize,
    data_sizes: Option<Vec<usize>>,
) -> PyResult<Bound<'py, PyDict>> {
    let models = vectors(models).map_err(to_py)?;
    let prev = prev_estimate.map(vector).transpose().map_err(to_py)?;
    let config = AggregatorConfig {
        rule: rule.parse::<Rule>().map_err(to_py)?,
        f_bound,
        epsilon,
        max_iterations,
        ..AggregatorConfig::default()
    };
    config.check_population(models.len()).map_err(to_py)?;
    let input = AggregationInput {
        models: &models,
        prev_estimate: prev.as_ref(),
        round,
        data_sizes: data_sizes.as_deref(),
    };
    let result = aggregation::aggregate(&config, input).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("aggregate", result.aggregate.into_values())?;
    out.set_item("client_weights", result.client_weights)?;
    out.set_item("iterations", result.iterations)?;
    Ok(out)
}

#[pyfunction]
fn krum_scores(models: Vec<Vec<f64>>, f_bound: usize) -> PyResult<Vec<f64>> {
    let models = vectors(models).map_err(to_py)?;
    aggregation::krum_scores(&models, f_bound).map_err(to_py)
}

/// Scaling factor for `round`: `gamma`, or the linear `(start, end, ramp_end_round)` schedule.
#[pyfunction]
#[pyo3(signature = (round, gamma = 0.33, schedule = None))]
fn gamma_for_round(round: usize, gamma: f64, schedule: Option<(f64, f64, usize)>) -> PyResult<f64> {
    let mut spec = AttackSpec::of_kind(if schedule.is_some() {
        AttackKind::IncreasingScaling
    } else {
        AttackKind::Backdoor
    });
    spec.gamma = gamma;
    spec.gamma_schedule = schedule.map(|(start, end, ramp_end_round)| GammaSchedule {
        start,
        end,
        ramp_end_round,
    });
    adversary::gamma_for_round(&spec, round).map_err(to_py)
}

#[pyfunction]
fn scale_update(global_model: Vec<f64>, backdoor: Vec<f64>, gamma: f64) -> PyResult<Vec<f64>> {
    let g = vector(global_model).map_err(to_py)?;
    let b = vector(backdoor).map_err(to_py)?;
    Ok(adversary::scale_update(&g, &b, gamma).map_err(to_py)?.into_values())
}

fn record_dict<'py>(py: Python<'py>, r: &RoundRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("round", r.round)?;
    d.set_item("accuracy", r.accuracy)?;
    d.set_item("misclassification", r.misclassification)?;
    d.set_item("client_weights", r.client_weights.clone())?;
    d.set_item("simeon_iterations", r.simeon_iterations)?;
    d.set_item("active_clients", r.active_clients)?;
    d.set_item("wall_time_ms", r.wall_time_ms)?;
    Ok(d)
}

/// Runs the config file or preset `config` and returns one dict per round.
#[pyfunction]
#[pyo3(signature = (config, seed = None, rounds = None))]
fn run_experiment<'py>(
    py: Python<'py>,
    config: &str,
    seed: Option<u64>,
    rounds: Option<usize>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let loaded = load_config(config).map_err(to_py)?;
    let config = RunOverrides { seed, rounds }.apply(&loaded.config).map_err(to_py)?;
    let records = py
        .detach(|| Experiment::prepare(config).and_then(|e| e.run()))
        .map_err(to_py)?
        .records;
    records.iter().map(|r| record_dict(py, r)).collect()
}

/// Like `fedfilter run`: writes the three artefacts into `out`; returns the round count.
#[pyfunction]
#[pyo3(signature = (config, out, seed = None, rounds = None, timing = false))]
fn run_to_directory(
    py: Python<'_>,
    config: &str,
    out: &str,
    seed: Option<u64>,
    rounds: Option<usize>,
    timing: bool,
) -> PyResult<usize> {
    let loaded = load_config(config).map_err(to_py)?;
    let outcome = py
        .detach(|| run_to_dir(&loaded, out, &RunOverrides { seed, rounds }, WriteOptions { timing }))
        .map_err(to_py)?;
    Ok(outcome.records.len())
}

#[pymodule]
fn fedfilter_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(mean_model, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_sum, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(euclidean_distance, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(krum_scores, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_for_round, m)?)?;
    m.add_function(wrap_pyfunction!(scale_update, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_to_directory, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
