use super::AggregationResult;
use crate::error::{Error, Result};
use crate::linalg::{self, ModelVector};

/// Pairwise squared distances, computed once for the upper triangle.
pub(crate) fn pairwise_squared(models: &[ModelVector]) -> Result<Vec<Vec<f64>>> {
    let n = models.len();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = linalg::squared_distance(&models[i], &models[j])?;
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    Ok(dist)
}

/// Scores the clients in `active` against each other using `neighbours`
/// nearest others each.
pub(crate) fn scores_within(dist: &[Vec<f64>], active: &[usize], neighbours: usize) -> Vec<f64> {
    active
        .iter()
        .map(|&i| {
            let mut ds: Vec<f64> = active
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| dist[i][j])
                .collect();
            ds.sort_by(f64::total_cmp);
            ds.iter().take(neighbours).sum()
        })
        .collect()
}

/// Position of the smallest score; earliest position wins ties.
pub(crate) fn argmin(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s < scores[best] {
            best = i;
        }
    }
    best
}

/// Sum of squared distances from each model to its `n - f - 2` nearest others.
pub fn krum_scores(models: &[ModelVector], f_bound: usize) -> Result<Vec<f64>> {
    let n = models.len();
    if n < f_bound + 3 {
        return Err(Error::Precondition(format!(
            "krum needs n >= f + 3 (n = {n}, f = {f_bound})"
        )));
    }
    linalg::check_models(models)?;
    let dist = pairwise_squared(models)?;
    let all: Vec<usize> = (0..n).collect();
    Ok(scores_within(&dist, &all, n - f_bound - 2))
}

/// Selects the model with minimal score.
pub fn aggregate_krum(models: &[ModelVector], f_bound: usize) -> Result<AggregationResult> {
    let scores = krum_scores(models, f_bound)?;
    let chosen = argmin(&scores);
    let mut weights = vec![0.0; models.len()];
    weights[chosen] = 1.0;
    Ok(AggregationResult::single_rule(models[chosen].clone(), weights))
}
