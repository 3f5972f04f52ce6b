//! TOML experiment configs and the shipped presets.
//!
//! The grammar is documented in `docs/config.md`. Unknown keys are rejected and
//! every semantic check reports the dotted path of the offending field.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::adversary::{AttackKind, AttackSpec, GammaSchedule};
use crate::aggregation::{AggregatorConfig, BulyanMean, InitialVariance, Rule};
use crate::error::{Error, Result};
use crate::learner::{ModelArch, TrainHyper, TriggerSpec};
use crate::simulator::{
    inject_sybils, BackdoorEvalSpec, ClientSpec, DatasetSpec, ExperimentConfig, SimeonReference,
    DEFAULT_SPREAD,
};

macro_rules! presets {
    ($($name:literal),* $(,)?) => {
        /// Shipped presets as `(file name, contents)`.
        pub const PRESETS: &[(&str, &str)] = &[
            $(($name, include_str!(concat!("../presets/", $name)))),*
        ];
    };
}

presets!(
    "control.cfg",
    "noisy_10.cfg",
    "noisy_20.cfg",
    "noisy_30.cfg",
    "collusion_10.cfg",
    "collusion_20.cfg",
    "collusion_30.cfg",
    "backdoor_10.cfg",
    "backdoor_20.cfg",
    "backdoor_30.cfg",
    "sybil.cfg",
    "ramp.cfg",
);

/// Looks a preset up by file name, with or without the `.cfg` suffix.
/// `noisy_30pct` style names are accepted as well.
pub fn preset(name: &str) -> Option<&'static str> {
    let stem = name.strip_suffix(".cfg").unwrap_or(name);
    let stem = stem.strip_suffix("pct").unwrap_or(stem);
    PRESETS
        .iter()
        .find(|(file, _)| file.strip_suffix(".cfg") == Some(stem))
        .map(|(_, text)| *text)
}

fn d_rounds() -> usize {
    100
}
fn d_eta() -> f64 {
    1.0
}
fn d_seed() -> u64 {
    42
}
fn d_count() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Option<String>,
    #[serde(default = "d_rounds")]
    rounds: usize,
    #[serde(default = "d_eta")]
    eta: f64,
    #[serde(default = "d_seed")]
    seed: u64,
    #[serde(default)]
    full_dataset_per_client: bool,
    #[serde(default)]
    simeon_reference: SimeonReference,
    #[serde(default)]
    dataset: RawDataset,
    #[serde(default)]
    model: RawModel,
    #[serde(default)]
    training: RawTraining,
    #[serde(default)]
    aggregator: RawAggregator,
    #[serde(default)]
    backdoor: RawBackdoor,
    #[serde(default)]
    clients: Vec<RawClients>,
    sybil: Option<RawClients>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawDataset {
    kind: String,
    d_in: usize,
    classes: usize,
    train_per_class: usize,
    validation_per_class: usize,
    spread: f64,
    seed: u64,
    train_path: Option<String>,
    validation_path: Option<String>,
}

impl Default for RawDataset {
    fn default() -> Self {
        RawDataset {
            kind: "synthetic".into(),
            d_in: 32,
            classes: 10,
            train_per_class: 500,
            validation_per_class: 100,
            spread: DEFAULT_SPREAD,
            seed: 7,
            train_path: None,
            validation_path: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawModel {
    hidden: usize,
}

impl Default for RawModel {
    fn default() -> Self {
        RawModel { hidden: 16 }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTraining {
    learning_rate: Option<f64>,
    momentum: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAggregator {
    rule: Option<String>,
    epsilon: Option<f64>,
    f_bound: Option<usize>,
    max_iterations: Option<usize>,
    variance_floor: Option<f64>,
    initial_variance: Option<InitialVariance>,
    bulyan_mean: Option<BulyanMean>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBackdoor {
    source_class: Option<usize>,
    target_class: Option<usize>,
    trigger_indices: Option<Vec<usize>>,
    trigger_value: Option<f64>,
    jitter: Option<f64>,
    augment_factor: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClients {
    #[serde(default = "d_count")]
    count: usize,
    #[serde(default)]
    attack: AttackKind,
    #[serde(default)]
    join_round: usize,
    leave_round: Option<usize>,
    noise_sigma: Option<f64>,
    noise_mu: Option<f64>,
    collusion_weights: Option<usize>,
    gamma: Option<f64>,
    gamma_schedule: Option<GammaSchedule>,
    model_replacement: Option<bool>,
    byzantine_epochs: Option<usize>,
    replacements_per_batch: Option<usize>,
}

impl RawClients {
    fn attack_spec(&self) -> AttackSpec {
        let mut spec = AttackSpec::of_kind(self.attack);
        if let Some(v) = self.noise_sigma {
            spec.noise_sigma = v;
        }
        if let Some(v) = self.noise_mu {
            spec.noise_mu = v;
        }
        if let Some(v) = self.collusion_weights {
            spec.collusion_weights = v;
        }
        if let Some(v) = self.gamma {
            spec.gamma = v;
        }
        if let Some(v) = self.gamma_schedule {
            spec.gamma_schedule = Some(v);
        }
        if let Some(v) = self.model_replacement {
            spec.model_replacement = v;
        }
        if let Some(v) = self.byzantine_epochs {
            spec.byzantine_epochs = v;
        }
        if let Some(v) = self.replacements_per_batch {
            spec.replacements_per_batch = v;
        }
        spec
    }
}

/// Reads, parses and validates a config file. Relative CSV paths resolve
/// against the file's directory.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::config(path.display().to_string(), format!("cannot read config: {e}"))
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let default_name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "experiment".into());
    parse_config_str(&text, &base, &default_name)
}

/// Parses config text. `base_dir` anchors relative dataset paths.
pub fn parse_config_str(text: &str, base_dir: &Path, default_name: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
    build(raw, base_dir, default_name)
}

fn toml_error(text: &str, e: &toml::de::Error) -> Error {
    let location = e
        .span()
        .map(|s| {
            let line = text[..s.start].matches('\n').count() + 1;
            format!("line {line}")
        })
        .unwrap_or_else(|| "config".into());
    Error::config(location, e.message().trim().to_string())
}

fn build(raw: RawConfig, base_dir: &Path, default_name: &str) -> Result<ExperimentConfig> {
    let ds = &raw.dataset;
    let dataset = match ds.kind.as_str() {
        "synthetic" => DatasetSpec::Synthetic {
            d_in: ds.d_in,
            classes: ds.classes,
            train_per_class: ds.train_per_class,
            validation_per_class: ds.validation_per_class,
            spread: ds.spread,
            seed: ds.seed,
        },
        "csv" => {
            let resolve = |p: &Option<String>, field: &str| -> Result<String> {
                let p = p.as_ref().ok_or_else(|| {
                    Error::config(format!("dataset.{field}"), "required when kind = \"csv\"")
                })?;
                let p = PathBuf::from(p);
                let p = if p.is_relative() { base_dir.join(p) } else { p };
                Ok(p.to_string_lossy().into_owned())
            };
            DatasetSpec::Csv {
                train_path: resolve(&ds.train_path, "train_path")?,
                validation_path: resolve(&ds.validation_path, "validation_path")?,
                classes: ds.classes,
            }
        }
        other => {
            return Err(Error::config(
                "dataset.kind",
                format!("unknown kind `{other}` (expected synthetic or csv)"),
            ))
        }
    };
    if let DatasetSpec::Synthetic {
        train_per_class,
        validation_per_class,
        spread,
        ..
    } = dataset
    {
        if train_per_class == 0 || validation_per_class == 0 {
            return Err(Error::config("dataset", "per-class counts must be positive"));
        }
        if !(spread >= 0.0 && spread.is_finite()) {
            return Err(Error::config("dataset.spread", "must be a nonnegative real"));
        }
    }

    let t = &raw.training;
    let d = TrainHyper::default();
    let benign_hyper = TrainHyper {
        learning_rate: t.learning_rate.unwrap_or(d.learning_rate),
        momentum: t.momentum.unwrap_or(d.momentum),
        epochs: t.epochs.unwrap_or(d.epochs),
        batch_size: t.batch_size.unwrap_or(d.batch_size),
        seed: 0,
    };

    let a = &raw.aggregator;
    let d = AggregatorConfig::default();
    let aggregator = AggregatorConfig {
        rule: a.rule.as_deref().map(str::parse::<Rule>).transpose()?.unwrap_or(d.rule),
        epsilon: a.epsilon.unwrap_or(d.epsilon),
        f_bound: a.f_bound.unwrap_or(d.f_bound),
        max_iterations: a.max_iterations.unwrap_or(d.max_iterations),
        variance_floor: a.variance_floor.unwrap_or(d.variance_floor),
        initial_variance: a.initial_variance.unwrap_or(d.initial_variance),
        bulyan_mean: a.bulyan_mean.unwrap_or(d.bulyan_mean),
    };

    let b = &raw.backdoor;
    let d = BackdoorEvalSpec::default();
    let backdoor = BackdoorEvalSpec {
        source_class: b.source_class.unwrap_or(d.source_class),
        target_class: b.target_class.unwrap_or(d.target_class),
        trigger: TriggerSpec {
            indices: b.trigger_indices.clone().unwrap_or(d.trigger.indices),
            value: b.trigger_value.unwrap_or(d.trigger.value),
            jitter: b.jitter.unwrap_or(d.trigger.jitter),
        },
        augment_factor: b.augment_factor.unwrap_or(d.augment_factor),
    };

    let mut clients = Vec::new();
    for (g, group) in raw.clients.iter().enumerate() {
        if group.count == 0 {
            return Err(Error::config(format!("clients[{g}].count"), "must be at least 1"));
        }
        let attack = group.attack_spec();
        for _ in 0..group.count {
            let id = clients.len() as u64;
            clients.push(ClientSpec {
                client_id: id,
                attack: attack.clone(),
                join_round: group.join_round,
                leave_round: group.leave_round,
                shard_index: id as usize,
            });
        }
    }

    let mut config = ExperimentConfig {
        name: raw.name.clone().unwrap_or_else(|| default_name.to_string()),
        arch: ModelArch {
            d_in: ds.d_in,
            hidden: raw.model.hidden,
            classes: ds.classes,
        },
        dataset,
        clients,
        aggregator,
        eta: raw.eta,
        total_rounds: raw.rounds,
        benign_hyper,
        experiment_seed: raw.seed,
        backdoor,
        full_dataset_per_client: raw.full_dataset_per_client,
        simeon_reference: raw.simeon_reference,
    };
    if let Some(s) = &raw.sybil {
        if s.leave_round.is_some() {
            return Err(Error::config("sybil.leave_round", "sybils do not leave"));
        }
        config = inject_sybils(&config, s.count, s.join_round, s.attack_spec())?;
    }
    config.validate()?;
    Ok(config)
}

/// SHA-256 of the config's canonical form: the parsed document re-serialised
/// as JSON with sorted keys, so key order and formatting do not matter.
pub fn config_hash(text: &str) -> Result<String> {
    let value: toml::Value = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
    let json = serde_json::to_value(value).map_err(|e| Error::Internal(e.to_string()))?;
    let canonical = serde_json::to_string(&json).map_err(|e| Error::Internal(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
}
