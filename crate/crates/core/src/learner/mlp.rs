use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{ModelVector, ShapeTag};
use crate::rng;

/// `d_in -> hidden (ReLU) -> classes (softmax)`.
///
/// Flattened layout: hidden weights (row per hidden unit), hidden biases,
/// output weights (row per class), output biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelArch {
    pub d_in: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl ModelArch {
    pub fn new(d_in: usize, hidden: usize, classes: usize) -> Result<Self> {
        if d_in == 0 || hidden == 0 || classes == 0 {
            return Err(Error::Precondition(
                "architecture sizes must all be at least 1".into(),
            ));
        }
        Ok(ModelArch {
            d_in,
            hidden,
            classes,
        })
    }

    pub fn param_count(&self) -> usize {
        self.d_in * self.hidden + self.hidden + self.hidden * self.classes + self.classes
    }

    pub fn shape_tag(&self) -> ShapeTag {
        ShapeTag::new(&format!("mlp:{}x{}x{}", self.d_in, self.hidden, self.classes))
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.d_in * self.hidden;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.hidden * self.classes;
        (b1, w2, b2)
    }

    pub fn zeros(&self) -> ModelVector {
        ModelVector::new(vec![0.0; self.param_count()], self.shape_tag())
            .expect("nonempty zero vector")
    }

    /// Uniform `±1/sqrt(fan_in)` weights, zero biases.
    pub fn init(&self, seed: u64) -> ModelVector {
        let mut r = rng::stream(rng::mix(&[seed, 0x1417]));
        let (b1, w2, b2) = self.offsets();
        let mut p = vec![0.0; self.param_count()];
        let s1 = 1.0 / (self.d_in as f64).sqrt();
        for v in &mut p[..b1] {
            *v = r.random_range(-s1..s1);
        }
        let s2 = 1.0 / (self.hidden as f64).sqrt();
        for v in &mut p[w2..b2] {
            *v = r.random_range(-s2..s2);
        }
        ModelVector::new(p, self.shape_tag()).expect("finite init")
    }

    fn check(&self, model: &ModelVector, d_in: usize) -> Result<()> {
        if model.dim() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                actual: model.dim(),
            });
        }
        if d_in != self.d_in {
            return Err(Error::DimensionMismatch {
                expected: self.d_in,
                actual: d_in,
            });
        }
        Ok(())
    }

    /// Hidden activations and logits for one input.
    fn forward_one(&self, p: &[f64], x: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
        let (b1, w2, b2) = self.offsets();
        for (h, out) in hidden.iter_mut().enumerate() {
            let row = &p[h * self.d_in..(h + 1) * self.d_in];
            let z: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + p[b1 + h];
            *out = z.max(0.0);
        }
        for (c, out) in logits.iter_mut().enumerate() {
            let row = &p[w2 + c * self.hidden..w2 + (c + 1) * self.hidden];
            *out = row.iter().zip(hidden.iter()).map(|(w, h)| w * h).sum::<f64>() + p[b2 + c];
        }
    }
}

/// In-place softmax with max-subtraction.
fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        total += *l;
    }
    for l in logits.iter_mut() {
        *l /= total;
    }
}

fn check_batch(arch: &ModelArch, model: &ModelVector, batch: &Batch) -> Result<()> {
    arch.check(model, batch.d_in)?;
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if let Some(l) = batch.labels.iter().find(|&&l| l >= arch.classes) {
        return Err(Error::Precondition(format!("label {l} out of range")));
    }
    Ok(())
}

/// Mean sparse categorical cross-entropy over the batch.
pub fn forward_loss(model: &ModelVector, arch: &ModelArch, batch: &Batch) -> Result<f64> {
    check_batch(arch, model, batch)?;
    let p = model.values();
    let mut hidden = vec![0.0; arch.hidden];
    let mut logits = vec![0.0; arch.classes];
    let mut total = 0.0;
    for i in 0..batch.len() {
        arch.forward_one(p, batch.feature(i), &mut hidden, &mut logits);
        total += stable_xent(&logits, batch.labels[i]);
    }
    Ok(total / batch.len() as f64)
}

fn stable_xent(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    (lse - logits[label]).max(0.0)
}

/// Loss and its exact gradient with respect to every parameter.
pub(crate) fn loss_and_gradient(
    model: &ModelVector,
    arch: &ModelArch,
    batch: &Batch,
) -> Result<(f64, Vec<f64>)> {
    check_batch(arch, model, batch)?;
    let p = model.values();
    let (b1, w2, b2) = arch.offsets();
    let mut grad = vec![0.0; arch.param_count()];
    let mut hidden = vec![0.0; arch.hidden];
    let mut probs = vec![0.0; arch.classes];
    let mut dhidden = vec![0.0; arch.hidden];
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for i in 0..batch.len() {
        let x = batch.feature(i);
        let label = batch.labels[i];
        arch.forward_one(p, x, &mut hidden, &mut probs);
        total += stable_xent(&probs, label);
        softmax_in_place(&mut probs);
        probs[label] -= 1.0;
        dhidden.iter_mut().for_each(|d| *d = 0.0);
        for c in 0..arch.classes {
            let g = probs[c] * scale;
            if g == 0.0 {
                continue;
            }
            grad[b2 + c] += g;
            let row = w2 + c * arch.hidden;
            for h in 0..arch.hidden {
                grad[row + h] += g * hidden[h];
                dhidden[h] += g * p[row + h];
            }
        }
        for h in 0..arch.hidden {
            if hidden[h] <= 0.0 {
                continue;
            }
            let g = dhidden[h];
            grad[b1 + h] += g;
            let row = &mut grad[h * arch.d_in..(h + 1) * arch.d_in];
            for (gw, xi) in row.iter_mut().zip(x) {
                *gw += g * xi;
            }
        }
    }
    Ok((total * scale, grad))
}

/// Exact gradient of [`forward_loss`].
pub fn gradient(model: &ModelVector, arch: &ModelArch, batch: &Batch) -> Result<ModelVector> {
    let (_, g) = loss_and_gradient(model, arch, batch)?;
    ModelVector::new(g, model.shape_tag().clone())
}

/// Argmax class for every item; ties go to the lowest class index.
pub fn predict(model: &ModelVector, arch: &ModelArch, dataset: &Dataset) -> Result<Vec<usize>> {
    arch.check(model, dataset.d_in())?;
    let p = model.values();
    let mut hidden = vec![0.0; arch.hidden];
    let mut logits = vec![0.0; arch.classes];
    Ok((0..dataset.len())
        .map(|i| {
            arch.forward_one(p, dataset.feature(i), &mut hidden, &mut logits);
            let mut best = 0;
            for c in 1..logits.len() {
                if logits[c] > logits[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

/// Fraction of items whose predicted class equals the label.
pub fn evaluate_accuracy(model: &ModelVector, arch: &ModelArch, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    let preds = predict(model, arch, dataset)?;
    let hits = preds
        .iter()
        .zip(dataset.labels())
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / dataset.len() as f64)
}
