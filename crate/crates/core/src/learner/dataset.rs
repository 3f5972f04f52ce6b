use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;

/// Labelled feature vectors stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    d_in: usize,
    classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

/// A training batch; same layout as [`Dataset`] without the metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub d_in: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.d_in..(i + 1) * self.d_in]
    }

    pub fn feature_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.features[i * self.d_in..(i + 1) * self.d_in]
    }
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        d_in: usize,
        classes: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if d_in == 0 || classes == 0 {
            return Err(Error::Precondition("dataset needs d_in >= 1 and classes >= 1".into()));
        }
        if features.len() != labels.len() * d_in {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * d_in,
                actual: features.len(),
            });
        }
        if let Some(l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Precondition(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        if let Some(index) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Dataset {
            name: name.into(),
            d_in,
            classes,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.d_in..(i + 1) * self.d_in]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn select(&self, name: impl Into<String>, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.d_in);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.feature(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            name: name.into(),
            d_in: self.d_in,
            classes: self.classes,
            features,
            labels,
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let sub = self.select("", indices);
        Batch {
            d_in: self.d_in,
            features: sub.features,
            labels: sub.labels,
        }
    }

    pub fn as_batch(&self) -> Batch {
        Batch {
            d_in: self.d_in,
            features: self.features.clone(),
            labels: self.labels.clone(),
        }
    }

    /// Reads a CSV file with header `f0,...,f{d-1},label`.
    ///
    /// `classes` defaults to one more than the largest label seen.
    pub fn from_csv(path: impl AsRef<Path>, classes: Option<usize>) -> Result<Dataset> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?
            .clone();
        let cols = headers.len();
        if cols < 2 || &headers[cols - 1] != "label" {
            return Err(Error::Io(format!(
                "{}: header must be f0,...,f{{d-1}},label",
                path.display()
            )));
        }
        for (j, h) in headers.iter().take(cols - 1).enumerate() {
            if h != format!("f{j}") {
                return Err(Error::Io(format!(
                    "{}: column {j} is `{h}`, expected `f{j}`",
                    path.display()
                )));
            }
        }
        let d_in = cols - 1;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            for j in 0..d_in {
                let v: f64 = record[j].trim().parse().map_err(|_| {
                    Error::Io(format!("{}: row {row}, column f{j} is not a number", path.display()))
                })?;
                features.push(v);
            }
            let l: usize = record[d_in].trim().parse().map_err(|_| {
                Error::Io(format!("{}: row {row}, label is not a nonnegative integer", path.display()))
            })?;
            labels.push(l);
        }
        let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Dataset::new(name, d_in, classes, features, labels)
    }

    /// Writes the CSV layout read by [`Dataset::from_csv`].
    pub fn to_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        let mut header: Vec<String> = (0..self.d_in).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.feature(i).iter().map(|v| format!("{v:?}")).collect();
            row.push(self.labels[i].to_string());
            w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Class centres drawn from a standard normal per coordinate.
fn class_centers(d_in: usize, classes: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(rng::mix(&[seed, 0xC3]));
    (0..classes)
        .map(|_| (0..d_in).map(|_| StandardNormal.sample(&mut r)).collect())
        .collect()
}

fn sample_clusters(
    name: &str,
    centers: &[Vec<f64>],
    per_class: usize,
    spread: f64,
    stream_tag: u64,
    seed: u64,
) -> Result<Dataset> {
    let d_in = centers[0].len();
    let classes = centers.len();
    let mut r = rng::stream(rng::mix(&[seed, stream_tag]));
    let mut features = Vec::with_capacity(per_class * classes * d_in);
    let mut labels = Vec::with_capacity(per_class * classes);
    for _ in 0..per_class {
        for (label, c) in centers.iter().enumerate() {
            for &mu in c {
                let z: f64 = StandardNormal.sample(&mut r);
                features.push(mu + spread * z);
            }
            labels.push(label);
        }
    }
    Dataset::new(name, d_in, classes, features, labels)
}

fn check_synthetic(d_in: usize, classes: usize, spread: f64) -> Result<()> {
    if d_in == 0 || classes == 0 {
        return Err(Error::Precondition("d_in and classes must be positive".into()));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::Precondition("cluster spread must be nonnegative".into()));
    }
    Ok(())
}

/// Gaussian clusters, one per class, with exactly `per_class` items each.
/// Labels cycle through the classes item by item.
pub fn generate_synthetic_dataset(
    d_in: usize,
    classes: usize,
    per_class: usize,
    cluster_spread: f64,
    seed: u64,
) -> Result<Dataset> {
    check_synthetic(d_in, classes, cluster_spread)?;
    let centers = class_centers(d_in, classes, seed);
    sample_clusters("synthetic", &centers, per_class, cluster_spread, 1, seed)
}

/// Training and validation sets sampled independently around the same centres.
pub fn generate_synthetic_split(
    d_in: usize,
    classes: usize,
    train_per_class: usize,
    validation_per_class: usize,
    cluster_spread: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    check_synthetic(d_in, classes, cluster_spread)?;
    let centers = class_centers(d_in, classes, seed);
    let train = sample_clusters("train", &centers, train_per_class, cluster_spread, 1, seed)?;
    let validation =
        sample_clusters("validation", &centers, validation_per_class, cluster_spread, 2, seed)?;
    Ok((train, validation))
}

/// Seeded shuffle, then split into `n_shards` contiguous pieces whose sizes
/// differ by at most one.
pub fn shard_dataset(dataset: &Dataset, n_shards: usize, seed: u64) -> Result<Vec<Dataset>> {
    if n_shards == 0 {
        return Err(Error::Precondition("need at least one shard".into()));
    }
    if n_shards > dataset.len() {
        return Err(Error::Precondition(format!(
            "{n_shards} shards requested for {} items",
            dataset.len()
        )));
    }
    Ok(shard_indices(dataset.len(), n_shards, seed)
        .iter()
        .enumerate()
        .map(|(s, idx)| dataset.select(format!("{}#{s}", dataset.name), idx))
        .collect())
}

pub(crate) fn shard_indices(len: usize, n_shards: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng::stream(rng::mix(&[seed, 0x5A])));
    let base = len / n_shards;
    let extra = len % n_shards;
    let mut out = Vec::with_capacity(n_shards);
    let mut start = 0;
    for s in 0..n_shards {
        let size = base + usize::from(s < extra);
        out.push(order[start..start + size].to_vec());
        start += size;
    }
    out
}
