//! Iterative-filtering aggregation.
//!
//! Each iteration estimates per-client variances against the current
//! estimate, turns them into credibilities (the geometric mean, over every
//! client's variance, of the Gaussian likelihood of the client's deviation),
//! and re-estimates the aggregate as the credibility-weighted mean. Once
//! consecutive estimates differ by less than `epsilon` in RMSE, the final
//! aggregate is the reciprocal-variance weighted mean.
//!
//! Credibilities are kept in log space and normalised with log-sum-exp; the
//! products over `n` likelihoods underflow otherwise.

use std::f64::consts::PI;

use super::{AggregationResult, AggregatorConfig, InitialVariance};
use crate::error::{Error, Result};
use crate::linalg::{self, ModelVector};

/// `(1/n) Σ_j [ -deviation_i / (2 v_j) - ln(2π v_j) / 2 ]` for every `i`.
fn log_geomean_likelihoods(deviations: &[f64], variances: &[f64]) -> Vec<f64> {
    let n = variances.len() as f64;
    let inv_sum: f64 = variances.iter().map(|v| 1.0 / v).sum();
    let log_norm: f64 = variances.iter().map(|v| (2.0 * PI * v).ln()).sum();
    deviations
        .iter()
        .map(|d| (-0.5 * d * inv_sum - 0.5 * log_norm) / n)
        .collect()
}

/// Log credibility of every client given its own variance and everyone else's.
pub fn log_credibilities(variances: &[f64]) -> Vec<f64> {
    log_geomean_likelihoods(variances, variances)
}

/// Softmax of log weights via log-sum-exp.
pub fn normalize_log_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Internal(format!(
            "non-finite log credibility (max = {max})"
        )));
    }
    let exps: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.iter().map(|e| e / total).collect();
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Internal("non-finite credibility weight".into()));
    }
    Ok(weights)
}

fn clamped_variances(models: &[ModelVector], estimate: &ModelVector, floor: f64) -> Result<Vec<f64>> {
    models
        .iter()
        .map(|m| Ok(linalg::mse(m, estimate)?.max(floor)))
        .collect()
}

/// Reciprocal-variance weights, normalised to sum to one.
fn reciprocal_weights(variances: &[f64]) -> Vec<f64> {
    let inv: Vec<f64> = variances.iter().map(|v| 1.0 / v).collect();
    let total: f64 = inv.iter().sum();
    inv.iter().map(|r| r / total).collect()
}

/// Aggregates one round with the iterative filter.
///
/// `prev_estimate` must be given exactly when `round > 0`; it seeds the first
/// variance estimate. Round 0 starts from the plain mean with a common
/// variance for every client.
pub fn aggregate_simeon(
    models: &[ModelVector],
    prev_estimate: Option<&ModelVector>,
    config: &AggregatorConfig,
    round: usize,
) -> Result<AggregationResult> {
    run(models, prev_estimate, config, round, None)
}

/// Estimates and credibility weights of every iteration, starting with `t = 0`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimeonTrace {
    pub estimates: Vec<ModelVector>,
    pub weights: Vec<Vec<f64>>,
}

/// [`aggregate_simeon`] that also returns the full iteration trajectory.
pub fn simeon_trace(
    models: &[ModelVector],
    prev_estimate: Option<&ModelVector>,
    config: &AggregatorConfig,
    round: usize,
) -> Result<(AggregationResult, SimeonTrace)> {
    let mut trace = SimeonTrace::default();
    let result = run(models, prev_estimate, config, round, Some(&mut trace))?;
    Ok((result, trace))
}

fn run(
    models: &[ModelVector],
    prev_estimate: Option<&ModelVector>,
    config: &AggregatorConfig,
    round: usize,
    mut record: Option<&mut SimeonTrace>,
) -> Result<AggregationResult> {
    config.validate()?;
    let n = models.len();
    if n < 2 {
        return Err(Error::Precondition(format!(
            "iterative filter needs at least 2 models, got {n}"
        )));
    }
    linalg::check_models(models)?;
    let floor = config.variance_floor;

    let (mut estimate, mut variances, mut weights) = match (round, prev_estimate) {
        (0, None) => {
            let estimate = linalg::mean_model(models)?;
            let deviations: Vec<f64> = models
                .iter()
                .map(|m| linalg::mse(m, &estimate))
                .collect::<Result<_>>()?;
            let total: f64 = deviations.iter().sum();
            let denom = match config.initial_variance {
                InitialVariance::MeanOverN => n as f64,
                InitialVariance::MeanOverNMinusOne => (n - 1) as f64,
            };
            let common = (total / denom).max(floor);
            let variances = vec![common; n];
            let weights = normalize_log_weights(&log_geomean_likelihoods(&deviations, &variances))?;
            (estimate, variances, weights)
        }
        (k, Some(prev)) if k > 0 => {
            linalg::check_pair(&models[0], prev)?;
            let estimate = prev.clone();
            let variances = clamped_variances(models, &estimate, floor)?;
            let weights = normalize_log_weights(&log_credibilities(&variances))?;
            (estimate, variances, weights)
        }
        (k, p) => {
            return Err(Error::Precondition(format!(
                "previous estimate must be present iff round > 0 (round = {k}, present = {})",
                p.is_some()
            )))
        }
    };

    let mut trace = vec![variances.clone()];
    if let Some(r) = record.as_deref_mut() {
        r.estimates.push(estimate.clone());
        r.weights.push(weights.clone());
    }
    let mut iterations = 0;
    loop {
        iterations += 1;
        let next = linalg::weighted_sum(models, &weights)?;
        variances = clamped_variances(models, &next, floor)?;
        weights = normalize_log_weights(&log_credibilities(&variances))?;
        trace.push(variances.clone());
        if let Some(r) = record.as_deref_mut() {
            r.estimates.push(next.clone());
            r.weights.push(weights.clone());
        }
        let shift = linalg::rmse(&estimate, &next)?;
        estimate = next;
        if shift < config.epsilon || iterations >= config.max_iterations {
            break;
        }
    }

    let client_weights = reciprocal_weights(&variances);
    let aggregate = linalg::weighted_sum(models, &client_weights)?;
    Ok(AggregationResult {
        aggregate,
        client_weights,
        iterations,
        variance_trace: trace,
    })
}
