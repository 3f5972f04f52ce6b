//! Acceptance suites behind `fedfilter verify` and the `acceptance` test target.

use std::time::{Duration, Instant};

use rand::Rng;

use crate::adversary::gamma_for_round;
use crate::aggregation::{
    aggregate_bulyan, aggregate_coordinate_median, aggregate_krum, bulyan_selection, krum_scores, simeon_trace,
    AggregatorConfig, BulyanMean, Rule,
};
use crate::error::Result;
use crate::learner::{forward_loss, gradient, Batch, ModelArch};
use crate::linalg::{ModelVector, ShapeTag};
use crate::report::WriteOptions;
use crate::rng;
use crate::runner::{load_config, run_to_dir, RunOverrides};
use crate::simulator::{Experiment, ExperimentConfig, RoundRecord};

#[path = "../tests/oracle/mod.rs"]
mod oracle;

#[path = "../tests/invariants/mod.rs"]
pub mod invariants;

#[derive(Clone, Debug)]
pub struct Check {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Check {
    pub fn line(&self) -> String {
        format!(
            "[{}] criterion {} {}: {} ({:.1}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

pub const SUITES: &[&str] = &[
    "oracles",
    "hand_trace",
    "gradient",
    "noisy",
    "backdoor",
    "sybil",
    "ramp",
    "invariants",
    "determinism",
];

/// Runs one suite by name, or every suite for `all`.
pub fn run_suite(name: &str) -> Result<Vec<Check>> {
    if name == "all" {
        let mut out = Vec::new();
        for s in SUITES {
            out.extend(run_suite(s)?);
        }
        return Ok(out);
    }
    let started = Instant::now();
    let (id, title, limit, result): (u8, &'static str, Option<f64>, Result<(bool, String)>) = match name {
        "oracles" => (1, "oracle equivalence", Some(10.0), oracles()),
        "hand_trace" => (2, "simeon hand trace", None, hand_trace()),
        "gradient" => (3, "gradient check", Some(5.0), gradient_check()),
        "noisy" => (4, "noisy clients", Some(600.0), noisy()),
        "backdoor" => (5, "backdoor", Some(900.0), backdoor()),
        "sybil" => (6, "sybil", Some(900.0), sybil()),
        "ramp" => (7, "increasing scaling", Some(900.0), ramp()),
        "invariants" => (8, "invariant suite", Some(120.0), invariant_suite()),
        "determinism" => (9, "determinism", None, determinism()),
        other => {
            return Err(crate::Error::config(
                "suite",
                format!("unknown suite `{other}` (expected one of {} or all)", SUITES.join(", ")),
            ))
        }
    };
    let elapsed = started.elapsed();
    let (mut passed, mut detail) = result?;
    if let Some(limit) = limit {
        if elapsed.as_secs_f64() >= limit {
            passed = false;
            detail.push_str(&format!("; runtime {:.1}s over {limit}s", elapsed.as_secs_f64()));
        }
    }
    Ok(vec![Check {
        id,
        name: title,
        passed,
        detail,
        elapsed,
    }])
}

fn model(values: Vec<f64>) -> ModelVector {
    ModelVector::new(values, ShapeTag::default()).expect("finite values")
}

fn random_instance(stream: &mut rng::Stream, n: usize, d: usize) -> Vec<Vec<f64>> {
    let integers = stream.random::<bool>();
    (0..n)
        .map(|_| {
            (0..d)
                .map(|_| {
                    if integers {
                        stream.random_range(-2..=2) as f64
                    } else {
                        stream.random_range(-1.0..1.0)
                    }
                })
                .collect()
        })
        .collect()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn oracles() -> Result<(bool, String)> {
    const CASES: usize = 1000;
    let mut stream = rng::stream(rng::mix(&[0xACCE, 1]));
    let mut failures = Vec::new();
    for case in 0..CASES {
        let n = stream.random_range(3..=7);
        let d = stream.random_range(1..=3);
        let f = stream.random_range(0..=n - 3);
        let raw = random_instance(&mut stream, n, d);
        let models: Vec<ModelVector> = raw.iter().cloned().map(model).collect();
        let got = aggregate_krum(&models, f)?;
        let want = oracle::krum(&raw, f);
        let picked = got.client_weights.iter().position(|&w| w == 1.0);
        let scores = krum_scores(&models, f)?;
        let scores_ok = (0..n).all(|i| {
            let pool: Vec<usize> = (0..n).collect();
            close(scores[i], oracle::krum_score_brute(&raw, &pool, i, n - f - 2), 1e-12)
        });
        if picked != Some(want) || got.aggregate.values() != raw[want].as_slice() || !scores_ok {
            failures.push(format!("krum case {case}"));
        }

        let m = stream.random_range(1..=7);
        let raw = random_instance(&mut stream, m, d);
        let models: Vec<ModelVector> = raw.iter().cloned().map(model).collect();
        let got = aggregate_coordinate_median(&models)?;
        if got.aggregate.values() != oracle::median(&raw).as_slice() {
            failures.push(format!("median case {case}"));
        }

        let raw = random_instance(&mut stream, 7, d);
        let models: Vec<ModelVector> = raw.iter().cloned().map(model).collect();
        let got = aggregate_bulyan(&models, 1, BulyanMean::Trimmed)?;
        let (want_sel, want_agg) = oracle::bulyan(&raw, 1);
        let mut sel = bulyan_selection(&models, 1)?;
        let mut want_sorted = want_sel.clone();
        sel.sort_unstable();
        want_sorted.sort_unstable();
        let agg_ok = got.aggregate.values().iter().zip(&want_agg).all(|(a, b)| close(*a, *b, 1e-12));
        if sel != want_sorted || !agg_ok {
            failures.push(format!("bulyan case {case}"));
        }
    }
    Ok((
        failures.is_empty(),
        if failures.is_empty() {
            format!("{CASES} instances each for krum, coordinate median and bulyan agree with brute force")
        } else {
            format!("{} mismatches, first: {}", failures.len(), failures[0])
        },
    ))
}

fn hand_trace() -> Result<(bool, String)> {
    let raw = [1.0, 1.0, 4.0];
    let models: Vec<ModelVector> = raw.iter().map(|&x| model(vec![x])).collect();
    let config = AggregatorConfig::default();
    let (result, trace) = simeon_trace(&models, None, &config, 0)?;
    let hand = oracle::simeon_scalar(&raw, config.epsilon, config.max_iterations);
    let expected_w0 = [0.405, 0.405, 0.191];
    let w0 = &trace.weights[0];
    let e1 = trace.estimates[1].values()[0];
    let w0_ok = w0.iter().zip(&expected_w0).all(|(a, b)| (a - b).abs() <= 1e-3)
        && w0.iter().zip(&hand.weights[0]).all(|(a, b)| (a - b).abs() <= 1e-9);
    let e1_ok = (e1 - 1.573).abs() <= 1e-3 && (e1 - hand.estimates[1]).abs() <= 1e-9;
    let agg = result.aggregate.values()[0];
    let agg_ok = (agg - 1.0).abs() <= 0.01 && (agg - hand.aggregate).abs() <= 1e-6;
    let outlier_ok = result.client_weights[2] < 0.01;
    Ok((
        w0_ok && e1_ok && agg_ok && outlier_ok,
        format!(
            "t0 weights [{:.4}, {:.4}, {:.4}], t1 estimate {:.4}, aggregate {:.6}, outlier weight {:.2e}, {} iterations",
            w0[0], w0[1], w0[2], e1, agg, result.client_weights[2], result.iterations
        ),
    ))
}

fn gradient_check() -> Result<(bool, String)> {
    let mut stream = rng::stream(rng::mix(&[0xACCE, 3]));
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for pair in 0..20 {
        let arch = ModelArch::new(8, 6, 4)?;
        let theta = arch.init(rng::mix(&[0xACCE, 3, pair]));
        let values = theta.values().iter().map(|w| w + 0.3 * stream.random_range(-1.0..1.0)).collect();
        let theta = ModelVector::new(values, theta.shape_tag().clone())?;
        let features: Vec<f64> = (0..16 * 8).map(|_| stream.random_range(-2.0..2.0)).collect();
        let labels: Vec<usize> = (0..16).map(|_| stream.random_range(0..4)).collect();
        let batch = Batch {
            d_in: 8,
            features: features.clone(),
            labels: labels.clone(),
        };
        let analytic = gradient(&theta, &arch, &batch)?;
        let xs: Vec<Vec<f64>> = features.chunks(8).map(<[f64]>::to_vec).collect();
        let loss = |p: &[f64]| oracle::mlp_loss(p, 8, 6, 4, &xs, &labels);
        // the naive oracle and the library loss must agree before differencing
        let lib_loss = forward_loss(&theta, &arch, &batch)?;
        worst = worst.max((lib_loss - loss(theta.values())).abs() / lib_loss.max(1e-12));
        for _ in 0..50 {
            let i = stream.random_range(0..theta.dim());
            let numeric = oracle::central_difference(&loss, theta.values(), i, 1e-5);
            let a = analytic.values()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    Ok((worst <= 1e-4, format!("{checked} coordinates over 20 pairs, worst relative error {worst:.2e}")))
}

fn preset(name: &str) -> Result<ExperimentConfig> {
    Ok(load_config(name)?.config)
}

fn run(config: ExperimentConfig) -> Result<(Vec<RoundRecord>, Vec<u64>)> {
    let exp = Experiment::prepare(config)?;
    let byz = exp.byzantine_ids();
    Ok((exp.run()?.records, byz))
}

fn with_rule(mut config: ExperimentConfig, rule: Rule, f: Option<usize>) -> ExperimentConfig {
    config.aggregator.rule = rule;
    if let Some(f) = f {
        config.aggregator.f_bound = f;
    }
    config
}

fn fraction(records: &[RoundRecord], ids: &[u64], keep: impl Fn(&RoundRecord) -> bool, below: f64) -> f64 {
    let kept: Vec<&RoundRecord> = records.iter().filter(|r| keep(r)).collect();
    let hits = kept.iter().filter(|r| r.weight_of(ids) < below).count();
    hits as f64 / kept.len().max(1) as f64
}

fn noisy() -> Result<(bool, String)> {
    let mut control = preset("control")?;
    control.total_rounds = 100;
    let control_acc = run(control)?.0.last().map(|r| r.accuracy).unwrap_or(0.0);
    let mut ok = true;
    let mut parts = vec![format!("control acc {control_acc:.3}")];
    for pct in [10, 20, 30] {
        let cfg = preset(&format!("noisy_{pct}"))?;
        let classes = cfg.arch.classes as f64;
        let (simeon, byz) = run(with_rule(cfg.clone(), Rule::Simeon, None))?;
        let excluded = fraction(&simeon, &byz, |r| r.round > 5, 0.01);
        let acc = simeon.last().map(|r| r.accuracy).unwrap_or(0.0);
        let (fedavg, _) = run(with_rule(cfg, Rule::Fedavg, None))?;
        let fedavg_acc = fedavg.last().map(|r| r.accuracy).unwrap_or(0.0);
        let pass = excluded >= 0.95 && (acc - control_acc).abs() <= 0.03 && (fedavg_acc - 1.0 / classes).abs() <= 0.05;
        ok &= pass;
        parts.push(format!(
            "{pct}%: simeon excluded {:.0}% of rounds, acc {acc:.3}; fedavg acc {fedavg_acc:.3} vs 1/C {:.2}",
            100.0 * excluded,
            1.0 / classes
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn backdoor() -> Result<(bool, String)> {
    let (control, _) = run(preset("control")?)?;
    let cfg = preset("backdoor_30")?;
    let f = cfg.clients.iter().filter(|c| c.attack.kind.is_byzantine()).count();
    let (simeon, _) = run(with_rule(cfg.clone(), Rule::Simeon, None))?;
    let (krum, _) = run(with_rule(cfg, Rule::Krum, Some(f)))?;
    let control_final = control.last().map(|r| r.misclassification).unwrap_or(0.0);
    let simeon_final = simeon.last().map(|r| r.misclassification).unwrap_or(1.0);
    let krum_peak = krum
        .iter()
        .zip(&control)
        .filter(|(k, _)| k.round > 50)
        .map(|(k, c)| k.misclassification - c.misclassification)
        .fold(f64::NEG_INFINITY, f64::max);
    let simeon_ok = simeon_final <= control_final + 0.05;
    let krum_ok = krum_peak > 0.20;
    Ok((
        simeon_ok && krum_ok,
        format!(
            "simeon final misclassification {simeon_final:.3} vs control {control_final:.3} ({}); krum (f={f}) peak excess after round 50 {krum_peak:.3} ({})",
            if simeon_ok { "ok" } else { "too high" },
            if krum_ok { "ok" } else { "needs > 0.20" }
        ),
    ))
}

fn median_of(mut v: Vec<usize>) -> f64 {
    v.sort_unstable();
    match v.len() {
        0 => 0.0,
        n if n % 2 == 1 => v[n / 2] as f64,
        n => (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0,
    }
}

fn sybil() -> Result<(bool, String)> {
    let cfg = preset("sybil")?;
    let injection = cfg.clients.iter().map(|c| c.join_round).max().unwrap_or(0);
    let cap = cfg.aggregator.max_iterations;
    let (records, byz) = run(cfg)?;
    let damped = fraction(&records, &byz, |r| r.round >= 40, 0.06);
    let pre = median_of(records.iter().filter(|r| r.round < injection).map(|r| r.simeon_iterations).collect());
    let post = median_of(records.iter().filter(|r| r.round >= injection).map(|r| r.simeon_iterations).collect());
    let max_it = records.iter().map(|r| r.simeon_iterations).max().unwrap_or(0);
    let ok = damped >= 0.90 && post > pre && max_it <= cap;
    Ok((
        ok,
        format!(
            "byzantine weight < 0.06 in {:.0}% of rounds from 40; median iterations {pre} before / {post} after injection; max {max_it} <= {cap}",
            100.0 * damped
        ),
    ))
}

fn ramp() -> Result<(bool, String)> {
    let cfg = preset("ramp")?;
    let spec = cfg
        .clients
        .iter()
        .find(|c| c.attack.kind.is_byzantine())
        .map(|c| c.attack.clone())
        .ok_or_else(|| crate::Error::Internal("ramp preset has no attacker".into()))?;
    let first = (0..cfg.total_rounds)
        .map(|r| gamma_for_round(&spec, r).map(|g| (r, g)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .find(|(_, g)| *g >= 0.30)
        .map(|(r, _)| r)
        .unwrap_or(cfg.total_rounds);
    let (records, byz) = run(cfg)?;
    let low = fraction(&records, &byz, |r| r.round >= first, 0.01);
    Ok((
        low >= 0.90,
        format!("gamma reaches 0.30 at round {first}; byzantine weight < 0.01 in {:.0}% of later rounds", 100.0 * low),
    ))
}

fn invariant_suite() -> Result<(bool, String)> {
    const SEEDS: u64 = 200;
    let mut failures = Vec::new();
    for (name, check) in invariants::ALL {
        for seed in 0..SEEDS {
            if let Err(e) = check(rng::mix(&[0x1A7, seed])) {
                failures.push(format!("{name} (seed {seed}): {e}"));
                break;
            }
        }
    }
    Ok((
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} invariants x {SEEDS} seeds", invariants::ALL.len())
        } else {
            failures.join("; ")
        },
    ))
}

fn determinism() -> Result<(bool, String)> {
    let loaded = load_config("sybil")?;
    let base = std::env::temp_dir().join(format!("fedfilter-determinism-{}", std::process::id()));
    let read = |dir: &std::path::Path, name: &str| {
        std::fs::read(dir.join(name)).map_err(|e| crate::Error::Io(format!("{}: {e}", dir.join(name).display())))
    };
    let mut outputs = Vec::new();
    for k in 0..2 {
        let dir = base.join(k.to_string());
        run_to_dir(&loaded, &dir, &RunOverrides::default(), WriteOptions::default())?;
        outputs.push((read(&dir, "metrics.csv")?, read(&dir, "weights.jsonl")?));
    }
    let _ = std::fs::remove_dir_all(&base);
    let same_csv = outputs[0].0 == outputs[1].0;
    let same_w = outputs[0].1 == outputs[1].1;
    let verdict = |same: bool| if same { "identical" } else { "differ" };
    Ok((
        same_csv && same_w,
        format!(
            "two runs of sybil.cfg: metrics.csv {} bytes {}, weights.jsonl {} bytes {}",
            outputs[0].0.len(),
            verdict(same_csv),
            outputs[0].1.len(),
            verdict(same_w)
        ),
    ))
}
