use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// Feature-pattern trigger: fixed coordinates overwritten with a fixed value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpec {
    pub indices: Vec<usize>,
    pub value: f64,
    /// Std of the seeded noise added to the other coordinates of each variant.
    pub jitter: f64,
}

impl Default for TriggerSpec {
    fn default() -> Self {
        TriggerSpec {
            indices: vec![0, 1, 2, 3],
            value: 3.0,
            jitter: 0.1,
        }
    }
}

impl TriggerSpec {
    pub fn apply(&self, features: &mut [f64]) {
        for &i in &self.indices {
            features[i] = self.value;
        }
    }

    pub fn is_present(&self, features: &[f64]) -> bool {
        self.indices.iter().all(|&i| features[i] == self.value)
    }
}

/// Every `source_class` item, triggered and relabelled to `target_class`,
/// expanded into `augment_factor` jittered variants.
pub fn generate_backdoor_set(
    dataset: &Dataset,
    source_class: usize,
    target_class: usize,
    trigger: &TriggerSpec,
    augment_factor: usize,
    seed: u64,
) -> Result<Dataset> {
    if source_class == target_class {
        return Err(Error::Precondition("backdoor source and target classes coincide".into()));
    }
    if source_class >= dataset.classes() || target_class >= dataset.classes() {
        return Err(Error::Precondition("backdoor class out of range".into()));
    }
    if augment_factor == 0 {
        return Err(Error::Precondition("augment factor must be at least 1".into()));
    }
    if let Some(i) = trigger.indices.iter().find(|&&i| i >= dataset.d_in()) {
        return Err(Error::Precondition(format!("trigger index {i} out of range")));
    }
    let sources: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.label(i) == source_class)
        .collect();
    if sources.is_empty() {
        return Err(Error::Empty("backdoor source items"));
    }
    let mut r = rng::stream(rng::mix(&[seed, 0xBD]));
    let d_in = dataset.d_in();
    let mut features = Vec::with_capacity(sources.len() * augment_factor * d_in);
    for &i in &sources {
        for _ in 0..augment_factor {
            let start = features.len();
            for &x in dataset.feature(i) {
                let z: f64 = StandardNormal.sample(&mut r);
                features.push(x + trigger.jitter * z);
            }
            trigger.apply(&mut features[start..]);
        }
    }
    let labels = vec![target_class; sources.len() * augment_factor];
    Dataset::new(
        format!("{}-backdoor", dataset.name),
        d_in,
        dataset.classes(),
        features,
        labels,
    )
}
