//! Deterministic federated-learning simulator with an iterative-filtering
//! aggregator, Byzantine-robust baselines and Byzantine client strategies.

// lets modules shared with the integration tests use `fedfilter::` paths
extern crate self as fedfilter;

pub mod adversary;
pub mod aggregation;
pub mod config;
pub mod error;
pub mod learner;
pub mod linalg;
pub mod report;
pub mod rng;
pub mod runner;
pub mod simulator;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::{ModelVector, ShapeTag};
