//! Desk-scale classifier: synthetic data, a one-hidden-layer softmax MLP with
//! hand-derived gradients, and SGD-with-momentum local training.

mod backdoor;
mod dataset;
mod mlp;
mod train;

pub use backdoor::{generate_backdoor_set, TriggerSpec};
pub use dataset::{generate_synthetic_dataset, generate_synthetic_split, shard_dataset, Batch, Dataset};
pub use mlp::{evaluate_accuracy, forward_loss, gradient, predict, ModelArch};
pub use train::{train_local, train_local_with, TrainHyper, TrainTrace};
