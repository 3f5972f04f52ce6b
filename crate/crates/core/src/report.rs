//! Run artefacts: `metrics.csv`, `weights.jsonl` and `manifest.json`.
//!
//! Floats are written like C's `%.9g`; lines end in `\n`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::RoundRecord;

pub const METRICS_HEADER: &str =
    "round,accuracy,misclassification,simeon_iterations,active_clients,wall_time_ms";

/// Formats `x` with 9 significant digits, `%.9g` style.
pub fn format_g9(x: f64) -> String {
    const P: i32 = 9;
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..P).contains(&exp) {
        let fixed = format!("{:.*}", (P - 1 - exp) as usize, x);
        trim_fraction(&fixed).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim_fraction(mantissa), sign, exp.abs())
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Options for the artefact writers.
#[derive(Clone, Copy, Debug, Default)]
pub struct WriteOptions {
    /// Write measured wall time; otherwise the column is 0 so reruns are
    /// byte-identical.
    pub timing: bool,
}

pub fn metrics_csv(records: &[RoundRecord], options: WriteOptions) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in records {
        let wall = if options.timing { r.wall_time_ms } else { 0 };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.round,
            format_g9(r.accuracy),
            format_g9(r.misclassification),
            r.simeon_iterations,
            r.active_clients,
            wall
        );
    }
    out
}

pub fn weights_jsonl(records: &[RoundRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push('{');
        for (i, (id, w)) in r.client_weights.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "\"{id}\":{}", format_g9(*w));
        }
        out.push_str("}\n");
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_path: String,
    pub output_dir: String,
    pub config_hash: String,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
}

impl RunManifest {
    pub fn new(config_path: &str, output_dir: &str, config_hash: String) -> Self {
        RunManifest {
            config_path: config_path.to_string(),
            output_dir: output_dir.to_string(),
            config_hash,
            tool_version: concat!("fedfilter ", env!("CARGO_PKG_VERSION")).to_string(),
            started_at: now(),
            finished_at: String::new(),
        }
    }

    pub fn finish(&mut self) {
        self.finished_at = now();
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Writes the three artefacts into `dir`, creating it if needed.
pub fn write_metrics(
    records: &[RoundRecord],
    dir: impl AsRef<Path>,
    manifest: &RunManifest,
    options: WriteOptions,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    write_file(dir, "metrics.csv", &metrics_csv(records, options))?;
    write_file(dir, "weights.jsonl", &weights_jsonl(records))?;
    let mut json = serde_json::to_string_pretty(manifest).map_err(|e| Error::Internal(e.to_string()))?;
    json.push('\n');
    write_file(dir, "manifest.json", &json)
}

/// One parsed `metrics.csv` row.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct MetricsRow {
    pub round: usize,
    pub accuracy: f64,
    pub misclassification: f64,
    pub simeon_iterations: usize,
    pub active_clients: usize,
    pub wall_time_ms: u64,
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Io(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.join(",") != METRICS_HEADER {
        return Err(Error::Io(format!("unexpected metrics header `{}`", header.join(","))));
    }
    reader
        .deserialize()
        .map(|row| row.map_err(|e| Error::Io(e.to_string())))
        .collect()
}

/// Parses `weights.jsonl` back into per-round maps.
pub fn parse_weights_jsonl(text: &str) -> Result<Vec<std::collections::BTreeMap<u64, f64>>> {
    text.lines()
        .map(|line| {
            let raw: std::collections::BTreeMap<String, f64> =
                serde_json::from_str(line).map_err(|e| Error::Io(e.to_string()))?;
            raw.into_iter()
                .map(|(k, v)| {
                    k.parse::<u64>()
                        .map(|k| (k, v))
                        .map_err(|e| Error::Io(format!("client id `{k}`: {e}")))
                })
                .collect()
        })
        .collect()
}
