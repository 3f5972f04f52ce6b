//! Config loading with overrides and the run-to-directory pipeline.

use std::path::{Path, PathBuf};

use crate::aggregation::Rule;
use crate::config::{self, parse_config_str};
use crate::error::{Error, Result};
use crate::report::{write_metrics, RunManifest, WriteOptions};
use crate::simulator::{Experiment, ExperimentConfig, ExperimentOutcome};

/// A parsed config plus the text it came from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub text: String,
    /// File path, or `preset:<name>` for embedded presets.
    pub origin: String,
}

impl LoadedConfig {
    /// The same experiment under another aggregation rule; the config text is
    /// edited too, so the manifest hash identifies the variant.
    pub fn with_rule(&self, rule: Rule, f_bound: usize) -> Result<LoadedConfig> {
        let mut value: toml::Table = toml::from_str(&self.text).map_err(|e| Error::config("config", e.message().to_string()))?;
        let agg = value
            .entry("aggregator")
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::config("aggregator", "must be a table"))?;
        agg.insert("rule".into(), toml::Value::String(rule.name().into()));
        agg.insert("f_bound".into(), toml::Value::Integer(f_bound as i64));
        let mut config = self.config.clone();
        config.aggregator.rule = rule;
        config.aggregator.f_bound = f_bound;
        config.validate()?;
        Ok(LoadedConfig {
            config,
            text: toml::to_string(&value).map_err(|e| Error::Internal(e.to_string()))?,
            origin: self.origin.clone(),
        })
    }
}

/// Loads `spec` as a file path; if no such file exists, as a preset name.
pub fn load_config(spec: &str) -> Result<LoadedConfig> {
    let path = Path::new(spec);
    if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(spec, format!("cannot read config: {e}")))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "experiment".into());
        let config = parse_config_str(&text, &base, &stem)?;
        return Ok(LoadedConfig {
            config,
            text,
            origin: spec.to_string(),
        });
    }
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match config::preset(&name) {
        Some(text) if path.parent().is_none_or(|p| p.as_os_str().is_empty()) => {
            let stem = name.strip_suffix(".cfg").unwrap_or(&name).to_string();
            let config = parse_config_str(text, &PathBuf::from("."), &stem)?;
            Ok(LoadedConfig {
                text: text.to_string(),
                origin: format!("preset:{}", config.name),
                config,
            })
        }
        _ => Err(Error::config(spec, "config file not found")),
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub rounds: Option<usize>,
}

impl RunOverrides {
    pub fn apply(&self, config: &ExperimentConfig) -> Result<ExperimentConfig> {
        let mut out = config.clone();
        if let Some(seed) = self.seed {
            out.experiment_seed = seed;
        }
        if let Some(rounds) = self.rounds {
            out.total_rounds = rounds;
        }
        out.validate()?;
        Ok(out)
    }

    /// Hash of the canonical config with the overrides folded in.
    pub fn config_hash(&self, text: &str) -> Result<String> {
        let mut value: toml::Table = toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))?;
        if let Some(seed) = self.seed {
            let seed = i64::try_from(seed).map_err(|_| Error::config("seed", "override exceeds 2^63 - 1"))?;
            value.insert("seed".into(), toml::Value::Integer(seed));
        }
        if let Some(rounds) = self.rounds {
            value.insert("rounds".into(), toml::Value::Integer(rounds as i64));
        }
        config::config_hash(&toml::to_string(&value).map_err(|e| Error::Internal(e.to_string()))?)
    }
}

/// Runs `loaded` with `overrides` and writes the artefacts into `out`.
pub fn run_to_dir(
    loaded: &LoadedConfig,
    out: impl AsRef<Path>,
    overrides: &RunOverrides,
    options: WriteOptions,
) -> Result<ExperimentOutcome> {
    let out = out.as_ref();
    let config = overrides.apply(&loaded.config)?;
    let mut manifest = RunManifest::new(
        &loaded.origin,
        &out.display().to_string(),
        overrides.config_hash(&loaded.text)?,
    );
    let outcome = Experiment::prepare(config)?.run()?;
    manifest.finish();
    write_metrics(&outcome.records, out, &manifest, options)?;
    Ok(outcome)
}
