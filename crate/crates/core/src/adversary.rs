//! Byzantine client behaviours.
//!
//! Each strategy turns the current global model, a client's shard and the
//! client's private random stream into the model the client submits.

use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{train_local_with, Batch, Dataset, ModelArch, TrainHyper};
use crate::linalg::{self, ModelVector};
use crate::rng::{self, Stream};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    Benign,
    Noisy,
    Collusion,
    Backdoor,
    IncreasingScaling,
}

impl AttackKind {
    pub fn is_byzantine(self) -> bool {
        self != AttackKind::Benign
    }

    pub fn trains_backdoor(self) -> bool {
        matches!(self, AttackKind::Backdoor | AttackKind::IncreasingScaling)
    }
}

/// Linear ramp of the scaling factor, held at `end` after `ramp_end_round`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaSchedule {
    pub start: f64,
    pub end: f64,
    pub ramp_end_round: usize,
}

/// Perturbation agreed by all colluders before training.
#[derive(Clone, Debug, PartialEq)]
pub struct CollusionPlan {
    pub indices: Vec<usize>,
    pub noise: Vec<f64>,
}

impl CollusionPlan {
    pub fn new(indices: Vec<usize>, noise: Vec<f64>) -> Result<Self> {
        if indices.len() != noise.len() {
            return Err(Error::DimensionMismatch {
                expected: indices.len(),
                actual: noise.len(),
            });
        }
        Ok(CollusionPlan { indices, noise })
    }

    /// `count` distinct indices in `[0, dim)` with `N(mu, sigma^2)` offsets.
    pub fn draw(dim: usize, count: usize, mu: f64, sigma: f64, seed: u64) -> Result<Self> {
        if count > dim {
            return Err(Error::Precondition(format!(
                "cannot collude on {count} of {dim} weights"
            )));
        }
        let mut r = rng::stream(rng::mix(&[seed, 0xC011]));
        let mut indices = index::sample(&mut r, dim, count).into_vec();
        indices.sort_unstable();
        let normal = Normal::new(mu, sigma)
            .map_err(|e| Error::Precondition(format!("collusion noise: {e}")))?;
        let noise = indices.iter().map(|_| normal.sample(&mut r)).collect();
        Ok(CollusionPlan { indices, noise })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub noise_sigma: f64,
    pub noise_mu: f64,
    /// Number of weights the colluders perturb.
    pub collusion_weights: usize,
    /// Materialised once per experiment and shared by every colluder.
    pub collusion: Option<Arc<CollusionPlan>>,
    pub gamma: f64,
    pub gamma_schedule: Option<GammaSchedule>,
    /// Use `gamma = n / (attackers * eta)` (total model replacement).
    pub model_replacement: bool,
    pub byzantine_epochs: usize,
    pub replacements_per_batch: usize,
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec {
            kind: AttackKind::Benign,
            noise_sigma: 1.0,
            noise_mu: 0.0,
            collusion_weights: 100,
            collusion: None,
            gamma: 0.33,
            gamma_schedule: None,
            model_replacement: false,
            byzantine_epochs: 6,
            replacements_per_batch: 16,
        }
    }
}

impl AttackSpec {
    pub fn of_kind(kind: AttackKind) -> Self {
        let mut spec = AttackSpec {
            kind,
            ..AttackSpec::default()
        };
        if kind == AttackKind::IncreasingScaling {
            spec.gamma_schedule = Some(GammaSchedule {
                start: 0.0,
                end: 0.66,
                ramp_end_round: 150,
            });
        }
        spec
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config(format!("{path}.noise_sigma"), "must be positive"));
        }
        if !self.noise_mu.is_finite() {
            return Err(Error::config(format!("{path}.noise_mu"), "must be finite"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::config(format!("{path}.gamma"), "must be nonnegative"));
        }
        if self.byzantine_epochs == 0 {
            return Err(Error::config(format!("{path}.byzantine_epochs"), "must be at least 1"));
        }
        if let Some(s) = &self.gamma_schedule {
            if self.kind != AttackKind::IncreasingScaling {
                return Err(Error::config(
                    format!("{path}.gamma_schedule"),
                    "only valid for increasing_scaling clients",
                ));
            }
            if s.ramp_end_round == 0 {
                return Err(Error::config(
                    format!("{path}.gamma_schedule.ramp_end_round"),
                    "must be at least 1",
                ));
            }
            if !(s.start >= 0.0 && s.end >= 0.0 && s.start.is_finite() && s.end.is_finite()) {
                return Err(Error::config(
                    format!("{path}.gamma_schedule"),
                    "start and end must be nonnegative",
                ));
            }
        }
        if let Some(plan) = &self.collusion {
            if plan.indices.len() != plan.noise.len() {
                return Err(Error::config(
                    format!("{path}.collusion"),
                    "indices and noise lengths differ",
                ));
            }
        }
        Ok(())
    }
}

/// Adds independent `N(mu, sigma^2)` noise to every weight.
pub fn attack_noisy(trained: &ModelVector, spec: &AttackSpec, stream: &mut Stream) -> Result<ModelVector> {
    let values = trained
        .values()
        .iter()
        .map(|&w| {
            let z: f64 = StandardNormal.sample(stream);
            w + spec.noise_mu + spec.noise_sigma * z
        })
        .collect();
    ModelVector::new(values, trained.shape_tag().clone())
}

/// Adds the shared collusion offsets at the agreed indices only.
pub fn attack_collusion(trained: &ModelVector, plan: &CollusionPlan) -> Result<ModelVector> {
    let mut values = trained.values().to_vec();
    for (&i, &offset) in plan.indices.iter().zip(&plan.noise) {
        let slot = values.get_mut(i).ok_or_else(|| {
            Error::Precondition(format!(
                "collusion index {i} out of range for dimension {}",
                trained.dim()
            ))
        })?;
        *slot += offset;
    }
    ModelVector::new(values, trained.shape_tag().clone())
}

/// Replaces `min(c, len)` distinct, uniformly chosen batch positions with
/// uniformly drawn backdoor items.
pub fn poison_batch(batch: &mut Batch, backdoor: &Dataset, c: usize, stream: &mut Stream) -> Result<()> {
    if c == 0 || batch.is_empty() {
        return Ok(());
    }
    if backdoor.is_empty() {
        return Err(Error::Empty("backdoor set"));
    }
    if backdoor.d_in() != batch.d_in {
        return Err(Error::DimensionMismatch {
            expected: batch.d_in,
            actual: backdoor.d_in(),
        });
    }
    let k = c.min(batch.len());
    for pos in index::sample(stream, batch.len(), k) {
        let src = stream.random_range(0..backdoor.len());
        batch.feature_mut(pos).copy_from_slice(backdoor.feature(src));
        batch.labels[pos] = backdoor.label(src);
    }
    Ok(())
}

/// `global + gamma * (backdoor - global)`, evaluated as the convex-form
/// `(1 - gamma) * global + gamma * backdoor` so both endpoints are exact.
pub fn scale_update(global: &ModelVector, backdoor: &ModelVector, gamma: f64) -> Result<ModelVector> {
    linalg::check_pair(global, backdoor)?;
    let values = global
        .values()
        .iter()
        .zip(backdoor.values())
        .map(|(g, b)| (1.0 - gamma) * g + gamma * b)
        .collect();
    ModelVector::new(values, global.shape_tag().clone())
}

/// Scaling factor for `round`: the linear schedule when present, else `spec.gamma`.
pub fn gamma_for_round(spec: &AttackSpec, round: usize) -> Result<f64> {
    match &spec.gamma_schedule {
        None => Ok(spec.gamma),
        Some(s) if s.ramp_end_round == 0 => Err(Error::Precondition(
            "gamma schedule ramp_end_round must be positive".into(),
        )),
        Some(s) => {
            let progress = round.min(s.ramp_end_round) as f64 / s.ramp_end_round as f64;
            Ok(s.start + (s.end - s.start) * progress)
        }
    }
}

/// Poisoned local training followed by update scaling with `gamma`.
#[allow(clippy::too_many_arguments)]
pub fn attack_backdoor_train(
    global: &ModelVector,
    arch: &ModelArch,
    shard: &Dataset,
    backdoor: &Dataset,
    spec: &AttackSpec,
    hyper: &TrainHyper,
    gamma: f64,
    stream: &mut Stream,
) -> Result<ModelVector> {
    let hyper = TrainHyper {
        epochs: spec.byzantine_epochs,
        ..*hyper
    };
    let c = spec.replacements_per_batch;
    let trained = train_local_with(global, arch, shard, &hyper, |batch| {
        poison_batch(batch, backdoor, c, stream)
    })?
    .model;
    scale_update(global, &trained, gamma)
}
