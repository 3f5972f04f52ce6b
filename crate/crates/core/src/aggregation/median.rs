use super::AggregationResult;
use crate::error::Result;
use crate::linalg::{self, ModelVector};

/// Per-coordinate median; even counts take the mean of the two middle values.
pub fn aggregate_coordinate_median(models: &[ModelVector]) -> Result<AggregationResult> {
    let dim = linalg::check_models(models)?;
    let n = models.len();
    let mut column = vec![0.0; n];
    let values = (0..dim)
        .map(|j| {
            for (c, m) in column.iter_mut().zip(models) {
                *c = m.values()[j];
            }
            column.sort_by(f64::total_cmp);
            if n % 2 == 1 {
                column[n / 2]
            } else {
                0.5 * (column[n / 2 - 1] + column[n / 2])
            }
        })
        .collect();
    let aggregate = ModelVector::new(values, models[0].shape_tag().clone())?;
    Ok(AggregationResult::single_rule(aggregate, vec![1.0 / n as f64; n]))
}
