use super::AggregationResult;
use crate::error::{Error, Result};
use crate::linalg::{self, ModelVector};

/// Linear combination weighted by reported data sizes.
pub fn aggregate_fedavg(models: &[ModelVector], data_sizes: &[usize]) -> Result<AggregationResult> {
    linalg::check_models(models)?;
    if data_sizes.len() != models.len() {
        return Err(Error::DimensionMismatch {
            expected: models.len(),
            actual: data_sizes.len(),
        });
    }
    let total: usize = data_sizes.iter().sum();
    if total == 0 {
        return Err(Error::InvalidWeights("total data size is zero".into()));
    }
    let weights: Vec<f64> = data_sizes
        .iter()
        .map(|&s| s as f64 / total as f64)
        .collect();
    let aggregate = linalg::weighted_sum(models, &weights)?;
    Ok(AggregationResult::single_rule(aggregate, weights))
}
