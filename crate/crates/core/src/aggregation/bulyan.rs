use super::krum::{argmin, pairwise_squared, scores_within};
use super::{AggregationResult, BulyanMean};
use crate::error::{Error, Result};
use crate::linalg::{self, offset_mean, ModelVector};

/// Clients chosen by repeated Krum selection without replacement, in
/// selection order. Neighbour counts shrink with the remaining pool
/// (`m - f - 2`, floored at zero).
pub fn bulyan_selection(models: &[ModelVector], f_bound: usize) -> Result<Vec<usize>> {
    let n = models.len();
    if n < 4 * f_bound + 3 {
        return Err(Error::Precondition(format!(
            "bulyan needs n >= 4f + 3 (n = {n}, f = {f_bound})"
        )));
    }
    linalg::check_models(models)?;
    let dist = pairwise_squared(models)?;
    let theta = n - 2 * f_bound;
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut selected = Vec::with_capacity(theta);
    while selected.len() < theta {
        let m = remaining.len();
        let neighbours = m.saturating_sub(f_bound + 2);
        let scores = scores_within(&dist, &remaining, neighbours);
        let pick = argmin(&scores);
        selected.push(remaining.remove(pick));
    }
    Ok(selected)
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let m = sorted.len();
    if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    }
}

/// Krum-selection followed by a per-coordinate trimmed (or plain) mean.
pub fn aggregate_bulyan(
    models: &[ModelVector],
    f_bound: usize,
    mean: BulyanMean,
) -> Result<AggregationResult> {
    let mut selection = bulyan_selection(models, f_bound)?;
    // combine in client order
    selection.sort_unstable();
    let theta = selection.len();
    let beta = match mean {
        BulyanMean::Trimmed => theta - 2 * f_bound,
        BulyanMean::Plain => theta,
    };
    let dim = models[0].dim();
    let mut inclusion = vec![0usize; models.len()];
    let mut values = Vec::with_capacity(dim);
    let mut column: Vec<f64> = Vec::with_capacity(theta);
    let mut ranked: Vec<(f64, usize)> = Vec::with_capacity(theta);
    for j in 0..dim {
        column.clear();
        column.extend(selection.iter().map(|&i| models[i].values()[j]));
        let mut sorted = column.clone();
        sorted.sort_by(f64::total_cmp);
        let med = median_sorted(&sorted);
        ranked.clear();
        ranked.extend(selection.iter().map(|&i| ((models[i].values()[j] - med).abs(), i)));
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut kept: Vec<usize> = ranked[..beta].iter().map(|&(_, i)| i).collect();
        kept.sort_unstable();
        for &i in &kept {
            inclusion[i] += 1;
        }
        values.push(offset_mean(kept.iter().map(|&i| models[i].values()[j])));
    }
    let total = (dim * beta) as f64;
    let weights = inclusion.iter().map(|&c| c as f64 / total).collect();
    let aggregate = ModelVector::new(values, models[0].shape_tag().clone())?;
    Ok(AggregationResult::single_rule(aggregate, weights))
}
