//! Aggregation rules behind one interface.
//!
//! Every rule takes the `n` submitted models of a round and returns the
//! aggregate plus per-client influence weights. Ties are broken by lowest
//! client index throughout.

mod bulyan;
mod fedavg;
mod krum;
mod median;
mod simeon;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ModelVector;

pub use bulyan::{aggregate_bulyan, bulyan_selection};
pub use fedavg::aggregate_fedavg;
pub use krum::{aggregate_krum, krum_scores};
pub use median::aggregate_coordinate_median;
pub use simeon::{aggregate_simeon, log_credibilities, normalize_log_weights, simeon_trace, SimeonTrace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Simeon,
    Fedavg,
    Krum,
    Bulyan,
    CoordinateMedian,
}

impl Rule {
    pub const ALL: [Rule; 5] = [
        Rule::Simeon,
        Rule::Fedavg,
        Rule::Krum,
        Rule::Bulyan,
        Rule::CoordinateMedian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rule::Simeon => "simeon",
            Rule::Fedavg => "fedavg",
            Rule::Krum => "krum",
            Rule::Bulyan => "bulyan",
            Rule::CoordinateMedian => "coordinate_median",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simeon" => Ok(Rule::Simeon),
            "fedavg" => Ok(Rule::Fedavg),
            "krum" => Ok(Rule::Krum),
            "bulyan" => Ok(Rule::Bulyan),
            "coordinate_median" | "median" => Ok(Rule::CoordinateMedian),
            other => Err(Error::config("aggregator.rule", format!("unknown rule `{other}`"))),
        }
    }
}

/// Normaliser of the common variance used on the very first iteration of round 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialVariance {
    /// `1/n` times the summed MSEs.
    #[default]
    MeanOverN,
    /// `1/(n-1)` times the summed MSEs.
    MeanOverNMinusOne,
}

/// Final combination Bulyan applies to its selection set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BulyanMean {
    /// Per coordinate, mean of the `θ - 2f` values closest to the median.
    #[default]
    Trimmed,
    /// Per coordinate, mean of the whole selection set.
    Plain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatorConfig {
    pub rule: Rule,
    /// Halting precision of the iterative filter.
    pub epsilon: f64,
    /// Assumed bound on Byzantine clients (Krum and Bulyan only).
    pub f_bound: usize,
    pub max_iterations: usize,
    pub variance_floor: f64,
    pub initial_variance: InitialVariance,
    pub bulyan_mean: BulyanMean,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        AggregatorConfig {
            rule: Rule::Simeon,
            epsilon: 1e-7,
            f_bound: 0,
            max_iterations: 200,
            variance_floor: 1e-12,
            initial_variance: InitialVariance::default(),
            bulyan_mean: BulyanMean::default(),
        }
    }
}

impl AggregatorConfig {
    pub fn with_rule(rule: Rule) -> Self {
        AggregatorConfig {
            rule,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("aggregator.epsilon", "must be a positive finite real"));
        }
        if !(self.variance_floor > 0.0 && self.variance_floor.is_finite()) {
            return Err(Error::config(
                "aggregator.variance_floor",
                "must be a positive finite real",
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("aggregator.max_iterations", "must be at least 1"));
        }
        Ok(())
    }

    /// Checks rule-specific bounds on the number of submissions.
    pub fn check_population(&self, n: usize) -> Result<()> {
        let f = self.f_bound;
        match self.rule {
            Rule::Krum if n < f + 3 => Err(Error::Precondition(format!(
                "krum needs n >= f + 3 (n = {n}, f = {f})"
            ))),
            Rule::Bulyan if n < 4 * f + 3 => Err(Error::Precondition(format!(
                "bulyan needs n >= 4f + 3 (n = {n}, f = {f})"
            ))),
            Rule::Simeon if n < 2 => Err(Error::Precondition(format!(
                "simeon needs at least 2 models (n = {n})"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregationResult {
    pub aggregate: ModelVector,
    /// Final per-client influence; sums to one.
    pub client_weights: Vec<f64>,
    /// Inner iterations of the iterative filter; zero for other rules.
    pub iterations: usize,
    /// Per-iteration client variances (iterative filter only).
    pub variance_trace: Vec<Vec<f64>>,
}

impl AggregationResult {
    pub(crate) fn single_rule(aggregate: ModelVector, client_weights: Vec<f64>) -> Self {
        AggregationResult {
            aggregate,
            client_weights,
            iterations: 0,
            variance_trace: Vec::new(),
        }
    }
}

/// Everything a rule may consume besides its configuration.
#[derive(Clone, Copy, Debug)]
pub struct AggregationInput<'a> {
    pub models: &'a [ModelVector],
    /// Estimate carried over from the previous round (iterative filter, round > 0).
    pub prev_estimate: Option<&'a ModelVector>,
    pub round: usize,
    /// Reported data sizes; federated averaging falls back to uniform weights.
    pub data_sizes: Option<&'a [usize]>,
}

impl<'a> AggregationInput<'a> {
    pub fn new(models: &'a [ModelVector]) -> Self {
        AggregationInput {
            models,
            prev_estimate: None,
            round: 0,
            data_sizes: None,
        }
    }
}

/// Dispatches to the configured rule.
pub fn aggregate(config: &AggregatorConfig, input: AggregationInput<'_>) -> Result<AggregationResult> {
    config.validate()?;
    let models = input.models;
    match config.rule {
        Rule::Simeon => aggregate_simeon(models, input.prev_estimate, config, input.round),
        Rule::Fedavg => match input.data_sizes {
            Some(sizes) => aggregate_fedavg(models, sizes),
            None => aggregate_fedavg(models, &vec![1; models.len()]),
        },
        Rule::Krum => aggregate_krum(models, config.f_bound),
        Rule::Bulyan => aggregate_bulyan(models, config.f_bound, config.bulyan_mean),
        Rule::CoordinateMedian => aggregate_coordinate_median(models),
    }
}
