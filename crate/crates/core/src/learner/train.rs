use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::{Batch, Dataset};
use super::mlp::{loss_and_gradient, ModelArch};
use crate::error::{Error, Result};
use crate::linalg::ModelVector;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 2,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("training.learning_rate", "must be a nonnegative real"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("training.momentum", "must lie in [0, 1)"));
        }
        if self.epochs == 0 {
            return Err(Error::config("training.epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("training.batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainTrace {
    pub model: ModelVector,
    /// Mean batch loss observed during each epoch (before each step).
    pub epoch_losses: Vec<f64>,
}

/// Local SGD with momentum from `global`, no batch transformation.
pub fn train_local(
    global: &ModelVector,
    arch: &ModelArch,
    shard: &Dataset,
    hyper: &TrainHyper,
) -> Result<ModelVector> {
    Ok(train_local_with(global, arch, shard, hyper, |_| Ok(()))?.model)
}

/// Local SGD with momentum; every batch passes through `prepare` before its
/// gradient step.
///
/// Runs `epochs * ceil(|shard| / batch_size)` steps of
/// `v <- momentum * v - lr * g; theta <- theta + v`, reshuffling each epoch
/// from a stream seeded by `hyper.seed`.
pub fn train_local_with(
    global: &ModelVector,
    arch: &ModelArch,
    shard: &Dataset,
    hyper: &TrainHyper,
    mut prepare: impl FnMut(&mut Batch) -> Result<()>,
) -> Result<TrainTrace> {
    hyper.validate()?;
    if shard.is_empty() {
        return Err(Error::Empty("training shard"));
    }
    let mut theta = global.values().to_vec();
    let mut velocity = vec![0.0; theta.len()];
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut shuffle = rng::stream(rng::mix(&[hyper.seed, 0x7EA1]));
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    let shape = global.shape_tag().clone();
    for _ in 0..hyper.epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(hyper.batch_size) {
            let mut batch = shard.batch(chunk);
            prepare(&mut batch)?;
            let current = ModelVector::new(theta.clone(), shape.clone())?;
            let (loss, grad) = loss_and_gradient(&current, arch, &batch)?;
            loss_sum += loss;
            steps += 1;
            for ((t, v), g) in theta.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = hyper.momentum * *v - hyper.learning_rate * g;
                *t += *v;
            }
        }
        epoch_losses.push(loss_sum / steps as f64);
    }
    Ok(TrainTrace {
        model: ModelVector::new(theta, shape)?,
        epoch_losses,
    })
}
