//! Flat-vector numeric kernel shared by every aggregator.
//!
//! All entry points validate their inputs eagerly: dimensions and shape tags
//! must agree and every coordinate must be finite.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Above this length, reductions switch to compensated summation.
pub const COMPENSATED_THRESHOLD: usize = 10_000;

/// Tolerance on `|sum(weights) - 1|` accepted by [`weighted_sum`].
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Opaque descriptor of the layer layout a vector was flattened from.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ShapeTag(Arc<str>);

impl ShapeTag {
    pub fn new(tag: &str) -> Self {
        ShapeTag(Arc::from(tag))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Default for ShapeTag {
    fn default() -> Self {
        ShapeTag::new("flat")
    }
}

impl fmt::Display for ShapeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A flattened parameter vector. Every entry is finite by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelVector {
    values: Vec<f64>,
    shape_tag: ShapeTag,
}

impl ModelVector {
    pub fn new(values: Vec<f64>, shape_tag: ShapeTag) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("model vector"));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(ModelVector { values, shape_tag })
    }

    /// Vector with the default `flat` shape tag.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        Self::new(values, ShapeTag::default())
    }

    pub fn zeros(dim: usize, shape_tag: ShapeTag) -> Result<Self> {
        Self::new(vec![0.0; dim], shape_tag)
    }

    /// Builds a vector whose values are known to be finite (kernel outputs).
    pub(crate) fn from_trusted(values: Vec<f64>, shape_tag: ShapeTag) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(ModelVector { values, shape_tag })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn shape_tag(&self) -> &ShapeTag {
        &self.shape_tag
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `self + scale * other`, coordinate-wise.
    pub fn add_scaled(&self, other: &ModelVector, scale: f64) -> Result<ModelVector> {
        check_pair(self, other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + scale * b)
            .collect();
        ModelVector::from_trusted(values, self.shape_tag.clone())
    }

    /// Maps every coordinate through `f`, rejecting non-finite results.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<ModelVector> {
        ModelVector::from_trusted(
            self.values.iter().map(|&v| f(v)).collect(),
            self.shape_tag.clone(),
        )
    }
}

pub fn check_pair(a: &ModelVector, b: &ModelVector) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    if a.shape_tag != b.shape_tag {
        return Err(Error::ShapeMismatch {
            expected: a.shape_tag.to_string(),
            actual: b.shape_tag.to_string(),
        });
    }
    Ok(())
}

/// Checks that `models` is nonempty and homogeneous; returns the common dimension.
pub fn check_models(models: &[ModelVector]) -> Result<usize> {
    let first = models.first().ok_or(Error::Empty("model list"))?;
    for m in &models[1..] {
        check_pair(first, m)?;
    }
    Ok(first.dim())
}

/// Sum of a slice; compensated (Neumaier) when longer than [`COMPENSATED_THRESHOLD`].
pub fn sum(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    if values.len() <= COMPENSATED_THRESHOLD {
        return values.sum();
    }
    let mut total = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = total + v;
        if total.abs() >= v.abs() {
            comp += (total - t) + v;
        } else {
            comp += (v - t) + total;
        }
        total = t;
    }
    total + comp
}

/// Coordinate-wise arithmetic mean.
///
/// Accumulates offsets from the first model, so identical inputs reproduce
/// that model bit-for-bit.
pub fn mean_model(models: &[ModelVector]) -> Result<ModelVector> {
    check_models(models)?;
    let refs: Vec<&ModelVector> = models.iter().collect();
    mean_of_refs(&refs)
}

pub(crate) fn mean_of_refs(models: &[&ModelVector]) -> Result<ModelVector> {
    let first = models.first().ok_or(Error::Empty("model list"))?;
    let values = (0..first.dim())
        .map(|j| offset_mean(models.iter().map(|m| m.values[j])))
        .collect();
    ModelVector::from_trusted(values, first.shape_tag.clone())
}

/// Mean of a nonempty sequence, accumulated as offsets from its first element.
pub(crate) fn offset_mean(mut values: impl Iterator<Item = f64>) -> f64 {
    let Some(first) = values.next() else {
        return f64::NAN;
    };
    let mut count = 1.0;
    let mut offsets = 0.0;
    for v in values {
        offsets += v - first;
        count += 1.0;
    }
    first + offsets / count
}

/// Checks a weight vector: nonnegative, finite, summing to one.
pub fn check_weights(weights: &[f64]) -> Result<()> {
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::InvalidWeights(format!(
            "weights must be finite and nonnegative, found {w}"
        )));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::InvalidWeights(format!(
            "weights sum to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Coordinate-wise `sum_i weights[i] * models[i]`.
pub fn weighted_sum(models: &[ModelVector], weights: &[f64]) -> Result<ModelVector> {
    let dim = check_models(models)?;
    if weights.len() != models.len() {
        return Err(Error::DimensionMismatch {
            expected: models.len(),
            actual: weights.len(),
        });
    }
    check_weights(weights)?;
    let mut acc = vec![0.0; dim];
    for (m, &w) in models.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (a, v) in acc.iter_mut().zip(&m.values) {
            *a += w * v;
        }
    }
    ModelVector::from_trusted(acc, models[0].shape_tag.clone())
}

fn squared_diff_sum(a: &ModelVector, b: &ModelVector) -> Result<f64> {
    check_pair(a, b)?;
    Ok(sum(a.values.iter().zip(&b.values).map(|(x, y)| {
        let d = x - y;
        d * d
    })))
}

/// Squared Euclidean distance.
pub fn squared_distance(a: &ModelVector, b: &ModelVector) -> Result<f64> {
    squared_diff_sum(a, b)
}

/// Mean over coordinates of squared differences.
pub fn mse(a: &ModelVector, b: &ModelVector) -> Result<f64> {
    Ok(squared_diff_sum(a, b)? / a.dim() as f64)
}

pub fn rmse(a: &ModelVector, b: &ModelVector) -> Result<f64> {
    Ok(mse(a, b)?.sqrt())
}

pub fn euclidean_distance(a: &ModelVector, b: &ModelVector) -> Result<f64> {
    Ok(squared_diff_sum(a, b)?.sqrt())
}
