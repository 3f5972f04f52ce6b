//! One check per documented invariant, each driven by a single seed.
//!
//! Shared by the property tests and the `invariants` verify suite; the parent
//! module must also declare `oracle`.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use fedfilter::adversary::{attack_collusion, attack_noisy, gamma_for_round, scale_update, AttackKind, AttackSpec, GammaSchedule};
use fedfilter::aggregation::{
    aggregate, aggregate_bulyan, aggregate_coordinate_median, aggregate_krum, aggregate_simeon, AggregationInput,
    AggregatorConfig, BulyanMean, Rule,
};
use fedfilter::config::{config_hash, parse_config_str, PRESETS};
use fedfilter::learner::{
    forward_loss, generate_synthetic_dataset, gradient, shard_dataset, train_local, train_local_with, Batch, Dataset,
    ModelArch, TrainHyper,
};
use fedfilter::linalg::{euclidean_distance, mean_model, mse, weighted_sum};
use fedfilter::report::{metrics_csv, parse_metrics_csv, WriteOptions};
use fedfilter::rng::{self, Stream};
use fedfilter::simulator::{ClientSpec, DatasetSpec, Experiment, ExperimentConfig, RoundRecord, RoundState};
use fedfilter::{ModelVector, ShapeTag};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::oracle;

pub type Check = fn(u64) -> Result<(), String>;

pub const ALL: &[(&str, Check)] = &[
    ("mean_equals_uniform_weighted_sum", mean_equals_uniform_weighted_sum),
    ("mse_symmetric_and_matches_distance", mse_symmetric_and_matches_distance),
    ("weighted_sum_permutation_equivariant", weighted_sum_permutation_equivariant),
    ("model_vector_rejects_bad_input", model_vector_rejects_bad_input),
    ("simeon_permutation_equivariant", simeon_permutation_equivariant),
    ("simeon_translation_equivariant", simeon_translation_equivariant),
    ("simeon_weights_bounded_with_duplicates", simeon_weights_bounded_with_duplicates),
    ("simeon_halts_and_reproduces", simeon_halts_and_reproduces),
    ("krum_matches_oracle", krum_matches_oracle),
    ("median_matches_oracle", median_matches_oracle),
    ("bulyan_without_bound_is_mean", bulyan_without_bound_is_mean),
    ("breakdown_contrast", breakdown_contrast),
    ("aggregation_results_well_formed", aggregation_results_well_formed),
    ("aggregator_config_validation", aggregator_config_validation),
    ("gradient_matches_finite_differences", gradient_matches_finite_differences),
    ("training_deterministic", training_deterministic),
    ("shards_partition_dataset", shards_partition_dataset),
    ("loss_non_increasing_on_separable_set", loss_non_increasing_on_separable_set),
    ("scale_update_affine", scale_update_affine),
    ("collusion_identical_across_clients_and_rounds", collusion_identical_across_clients_and_rounds),
    ("noisy_changes_nearly_every_coordinate", noisy_changes_nearly_every_coordinate),
    ("gamma_non_decreasing", gamma_non_decreasing),
    ("attack_spec_validation", attack_spec_validation),
    ("membership_conserved", membership_conserved),
    ("global_update_affine_for_every_rule", global_update_affine_for_every_rule),
    ("experiment_deterministic", experiment_deterministic),
    ("round_weights_cover_active_clients", round_weights_cover_active_clients),
    ("experiment_config_validation", experiment_config_validation),
    ("presets_parse", presets_parse),
    ("metrics_csv_round_trip", metrics_csv_round_trip),
    ("config_hash_ignores_key_order", config_hash_ignores_key_order),
];

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn mv(values: Vec<f64>) -> ModelVector {
    ModelVector::new(values, ShapeTag::default()).expect("finite")
}

fn random_models(s: &mut Stream, n: usize, d: usize, scale: f64) -> Vec<ModelVector> {
    (0..n)
        .map(|_| mv((0..d).map(|_| scale * s.random_range(-1.0..1.0)).collect()))
        .collect()
}

fn random_weights(s: &mut Stream, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| s.random_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

fn err(e: fedfilter::Error) -> String {
    e.to_string()
}

// ---- linear algebra ----

fn mean_equals_uniform_weighted_sum(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let n = s.random_range(1..12);
    let d = s.random_range(1..40);
    let models = random_models(&mut s, n, d, 10.0);
    let mean = mean_model(&models).map_err(err)?;
    let ws = weighted_sum(&models, &vec![1.0 / n as f64; n]).map_err(err)?;
    for (a, b) in mean.values().iter().zip(ws.values()) {
        ensure(rel_close(*a, *b, 1e-12), || format!("{a} vs {b}"))?;
    }
    Ok(())
}

fn mse_symmetric_and_matches_distance(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let d = s.random_range(1..200);
    let m = random_models(&mut s, 2, d, 5.0);
    let ab = mse(&m[0], &m[1]).map_err(err)?;
    let ba = mse(&m[1], &m[0]).map_err(err)?;
    ensure(ab == ba, || format!("mse asymmetric: {ab} vs {ba}"))?;
    let dist = euclidean_distance(&m[0], &m[1]).map_err(err)?;
    ensure(rel_close(dist * dist, d as f64 * ab, 1e-9), || {
        format!("distance^2 {} vs d*mse {}", dist * dist, d as f64 * ab)
    })
}

fn weighted_sum_permutation_equivariant(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let n = s.random_range(1..10);
    let d = s.random_range(1..30);
    let models = random_models(&mut s, n, d, 3.0);
    let weights = random_weights(&mut s, n);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut s);
    let a = weighted_sum(&models, &weights).map_err(err)?;
    let pm: Vec<ModelVector> = perm.iter().map(|&i| models[i].clone()).collect();
    let pw: Vec<f64> = perm.iter().map(|&i| weights[i]).collect();
    let b = weighted_sum(&pm, &pw).map_err(err)?;
    for (x, y) in a.values().iter().zip(b.values()) {
        ensure(rel_close(*x, *y, 1e-12), || format!("{x} vs {y}"))?;
    }
    Ok(())
}

fn model_vector_rejects_bad_input(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let d = s.random_range(2..20);
    let mut values: Vec<f64> = (0..d).map(|_| s.random_range(-1.0..1.0)).collect();
    let a = mv(values.clone());
    let bad_at = s.random_range(0..d);
    values[bad_at] = [f64::NAN, f64::INFINITY, f64::NEG_INFINITY][s.random_range(0..3)];
    ensure(ModelVector::new(values, ShapeTag::default()).is_err(), || "non-finite accepted".into())?;
    ensure(ModelVector::new(vec![], ShapeTag::default()).is_err(), || "empty vector accepted".into())?;
    let short = mv(vec![0.0; d - 1]);
    ensure(mse(&a, &short).is_err(), || "dimension mismatch accepted".into())?;
    let tagged = ModelVector::new(a.values().to_vec(), ShapeTag::new("other")).map_err(err)?;
    ensure(mean_model(&[a.clone(), tagged]).is_err(), || "shape tag mismatch accepted".into())
}

// ---- aggregation ----

fn simeon_instance(s: &mut Stream) -> (Vec<ModelVector>, Option<ModelVector>, usize, AggregatorConfig) {
    let n = s.random_range(2..9);
    let d = s.random_range(1..8);
    let models = random_models(s, n, d, 2.0);
    let round = if s.random::<bool>() { 0 } else { s.random_range(1..50) };
    let prev = (round > 0).then(|| random_models(s, 1, d, 2.0).remove(0));
    let config = AggregatorConfig {
        epsilon: 1e-11,
        ..AggregatorConfig::default()
    };
    (models, prev, round, config)
}

fn simeon_permutation_equivariant(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let (models, prev, round, config) = simeon_instance(&mut s);
    let n = models.len();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut s);
    let a = aggregate_simeon(&models, prev.as_ref(), &config, round).map_err(err)?;
    let pm: Vec<ModelVector> = perm.iter().map(|&i| models[i].clone()).collect();
    let b = aggregate_simeon(&pm, prev.as_ref(), &config, round).map_err(err)?;
    for (k, &i) in perm.iter().enumerate() {
        ensure((b.client_weights[k] - a.client_weights[i]).abs() <= 1e-9, || {
            format!("weight of client {i}: {} vs {}", a.client_weights[i], b.client_weights[k])
        })?;
    }
    for (x, y) in a.aggregate.values().iter().zip(b.aggregate.values()) {
        ensure(rel_close(*x, *y, 1e-9), || format!("aggregate {x} vs {y}"))?;
    }
    Ok(())
}

fn simeon_translation_equivariant(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let (models, prev, round, config) = simeon_instance(&mut s);
    let d = models[0].dim();
    let c: Vec<f64> = (0..d).map(|_| s.random_range(-5.0..5.0)).collect();
    let shift = |m: &ModelVector| mv(m.values().iter().zip(&c).map(|(x, ci)| x + ci).collect());
    let a = aggregate_simeon(&models, prev.as_ref(), &config, round).map_err(err)?;
    let moved: Vec<ModelVector> = models.iter().map(shift).collect();
    let moved_prev = prev.as_ref().map(shift);
    let b = aggregate_simeon(&moved, moved_prev.as_ref(), &config, round).map_err(err)?;
    for ((x, y), ci) in a.aggregate.values().iter().zip(b.aggregate.values()).zip(&c) {
        ensure(rel_close(x + ci, *y, 1e-9), || format!("aggregate {x} + {ci} vs {y}"))?;
    }
    for (wa, wb) in a.client_weights.iter().zip(&b.client_weights) {
        ensure((wa - wb).abs() <= 1e-9, || format!("weights {wa} vs {wb}"))?;
    }
    Ok(())
}

fn simeon_weights_bounded_with_duplicates(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let n = s.random_range(2..10);
    let d = s.random_range(1..6);
    let distinct = s.random_range(1..=n);
    let pool = random_models(&mut s, distinct, d, 1e3);
    let models: Vec<ModelVector> = (0..n).map(|i| pool[i % distinct].clone()).collect();
    let round = s.random_range(0..3);
    let prev = (round > 0).then(|| pool[s.random_range(0..distinct)].clone());
    let config = AggregatorConfig::default();
    let r = aggregate_simeon(&models, prev.as_ref(), &config, round).map_err(err)?;
    ensure(
        r.client_weights.iter().all(|w| w.is_finite() && (0.0..=1.0).contains(w)),
        || format!("weights out of range: {:?}", r.client_weights),
    )?;
    ensure(r.aggregate.values().iter().all(|x| x.is_finite()), || "aggregate not finite".into())
}

fn simeon_halts_and_reproduces(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let (models, prev, round, mut config) = simeon_instance(&mut s);
    config.max_iterations = s.random_range(1..30);
    config.epsilon = 10f64.powi(-s.random_range(1..20));
    let a = aggregate_simeon(&models, prev.as_ref(), &config, round).map_err(err)?;
    let b = aggregate_simeon(&models, prev.as_ref(), &config, round).map_err(err)?;
    ensure(a.iterations <= config.max_iterations, || {
        format!("{} iterations over cap {}", a.iterations, config.max_iterations)
    })?;
    ensure(a == b, || "results differ between identical calls".into())
}

fn raw(models: &[ModelVector]) -> Vec<Vec<f64>> {
    models.iter().map(|m| m.values().to_vec()).collect()
}

fn small_instance(s: &mut Stream, n: usize) -> Vec<ModelVector> {
    let d = s.random_range(1..=3);
    if s.random::<bool>() {
        (0..n)
            .map(|_| mv((0..d).map(|_| s.random_range(-2..=2) as f64).collect()))
            .collect()
    } else {
        random_models(s, n, d, 1.0)
    }
}

fn krum_matches_oracle(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let n = s.random_range(3..=7);
    let f = s.random_range(0..=n - 3);
    let models = small_instance(&mut s, n);
    let got = aggregate_krum(&models, f).map_err(err)?;
    let want = oracle::krum(&raw(&models), f);
    ensure(got.client_weights[want] == 1.0 && got.aggregate == models[want], || {
        format!("krum picked {:?}, oracle {want}", got.client_weights)
    })
}

fn median_matches_oracle(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let n = s.random_range(1..=9);
    let models = small_instance(&mut s, n);
    let got = aggregate_coordinate_median(&models).map_err(err)?;
    let want = oracle::median(&raw(&models));
    ensure(got.aggregate.values() == want.as_slice(), || format!("{:?} vs {want:?}", got.aggregate.values()))
}

fn bulyan_without_bound_is_mean(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let n = s.random_range(3..12);
    let d = s.random_range(1..10);
    let models = random_models(&mut s, n, d, 4.0);
    let mean = mean_model(&models).map_err(err)?;
    for variant in [BulyanMean::Trimmed, BulyanMean::Plain] {
        let b = aggregate_bulyan(&models, 0, variant).map_err(err)?;
        ensure(b.aggregate == mean, || format!("{variant:?}: {:?} vs {:?}", b.aggregate.values(), mean.values()))?;
    }
    Ok(())
}

fn breakdown_contrast(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let noise = Normal::new(0.0, 0.1).expect("valid normal");
    let mut models = Vec::new();
    for i in 0..30 {
        let centre = if i < 18 { 0.0 } else { 5.0 };
        models.push(mv(vec![centre + noise.sample(&mut s)]));
    }
    let r = aggregate_simeon(&models, None, &AggregatorConfig::default(), 0).map_err(err)?;
    let colluders: f64 = r.client_weights[18..].iter().sum();
    ensure(colluders < 0.1, || format!("colluder weight {colluders}"))?;
    ensure(r.aggregate.values()[0].abs() <= 0.5, || format!("aggregate {}", r.aggregate.values()[0]))?;
    // stale bound: Krum still runs; its pick is not asserted
    aggregate_krum(&models, 2).map(|_| ()).map_err(err)
}

fn aggregation_results_well_formed(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let n = s.random_range(7..14);
    let d = s.random_range(1..6);
    let models = random_models(&mut s, n, d, 3.0);
    let sizes: Vec<usize> = (0..n).map(|_| s.random_range(1..100)).collect();
    for rule in Rule::ALL {
        let config = AggregatorConfig {
            f_bound: 1,
            ..AggregatorConfig::with_rule(rule)
        };
        let input = AggregationInput {
            data_sizes: Some(&sizes),
            ..AggregationInput::new(&models)
        };
        let r = aggregate(&config, input).map_err(err)?;
        let total: f64 = r.client_weights.iter().sum();
        ensure(r.client_weights.len() == n, || format!("{rule:?}: {} weights", r.client_weights.len()))?;
        ensure(r.client_weights.iter().all(|w| (0.0..=1.0).contains(w)), || format!("{rule:?}: weight outside [0,1]"))?;
        ensure((total - 1.0).abs() <= 1e-9, || format!("{rule:?}: weights sum to {total}"))?;
        ensure(r.iterations <= config.max_iterations, || format!("{rule:?}: iterations"))?;
        ensure(r.aggregate.dim() == d, || format!("{rule:?}: aggregate dimension"))?;
        if rule == Rule::Krum {
            ensure(r.client_weights.iter().filter(|&&w| w == 1.0).count() == 1, || "krum weights not one-hot".into())?;
        }
    }
    Ok(())
}

fn aggregator_config_validation(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let good = AggregatorConfig::default();
    ensure(good.validate().is_ok(), || "default rejected".into())?;
    let bad = [
        AggregatorConfig {
            epsilon: -s.random_range(0.0..1.0),
            ..good.clone()
        },
        AggregatorConfig {
            variance_floor: 0.0,
            ..good.clone()
        },
        AggregatorConfig {
            max_iterations: 0,
            ..good.clone()
        },
    ];
    for c in &bad {
        ensure(c.validate().is_err(), || format!("accepted {c:?}"))?;
    }
    let f = s.random_range(0..5);
    let krum = AggregatorConfig {
        f_bound: f,
        ..AggregatorConfig::with_rule(Rule::Krum)
    };
    ensure(krum.check_population(f + 3).is_ok() && krum.check_population(f + 2).is_err(), || {
        format!("krum population bound for f={f}")
    })?;
    let bulyan = AggregatorConfig {
        f_bound: f,
        ..AggregatorConfig::with_rule(Rule::Bulyan)
    };
    ensure(
        bulyan.check_population(4 * f + 3).is_ok() && bulyan.check_population(4 * f + 2).is_err(),
        || format!("bulyan population bound for f={f}"),
    )
}

// ---- learner ----

fn gradient_matches_finite_differences(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let arch = ModelArch::new(8, 6, 4).map_err(err)?;
    let init = arch.init(s.random());
    let values = init.values().iter().map(|w| w + 0.3 * s.random_range(-1.0..1.0)).collect();
    let theta = ModelVector::new(values, init.shape_tag().clone()).map_err(err)?;
    let batch = Batch {
        d_in: 8,
        features: (0..16 * 8).map(|_| s.random_range(-2.0..2.0)).collect(),
        labels: (0..16).map(|_| s.random_range(0..4)).collect(),
    };
    let analytic = gradient(&theta, &arch, &batch).map_err(err)?;
    let h = 1e-5;
    for _ in 0..5 {
        let i = s.random_range(0..theta.dim());
        let mut plus = theta.values().to_vec();
        let mut minus = plus.clone();
        plus[i] += h;
        minus[i] -= h;
        let tag = theta.shape_tag().clone();
        let lp = forward_loss(&ModelVector::new(plus, tag.clone()).map_err(err)?, &arch, &batch).map_err(err)?;
        let lm = forward_loss(&ModelVector::new(minus, tag).map_err(err)?, &arch, &batch).map_err(err)?;
        let numeric = (lp - lm) / (2.0 * h);
        let a = analytic.values()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        ensure(rel <= 1e-4, || format!("coordinate {i}: analytic {a} vs numeric {numeric}"))?;
    }
    Ok(())
}

fn toy_dataset(s: &mut Stream, spread: f64) -> Result<Dataset, String> {
    let d_in = s.random_range(2..6);
    let classes = s.random_range(2..5);
    generate_synthetic_dataset(d_in, classes, s.random_range(5..30), spread, s.random()).map_err(err)
}

fn training_deterministic(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let data = toy_dataset(&mut s, 1.0)?;
    let arch = ModelArch::new(data.d_in(), 5, data.classes()).map_err(err)?;
    let start = arch.init(s.random());
    let hyper = TrainHyper {
        epochs: s.random_range(1..3),
        batch_size: s.random_range(1..20),
        seed: s.random(),
        ..TrainHyper::default()
    };
    let a = train_local(&start, &arch, &data, &hyper).map_err(err)?;
    let b = train_local(&start, &arch, &data, &hyper).map_err(err)?;
    ensure(a == b, || "training not bit-identical".into())
}

fn shards_partition_dataset(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let len = s.random_range(1..200);
    let n = s.random_range(1..=len.min(25));
    // the single feature is the item's index, so shards can be traced back
    let data = Dataset::new("ids", 1, 1, (0..len).map(|i| i as f64).collect(), vec![0; len]).map_err(err)?;
    let shards = shard_dataset(&data, n, s.random()).map_err(err)?;
    ensure(shards.len() == n, || format!("{} shards, wanted {n}", shards.len()))?;
    let mut seen = BTreeSet::new();
    for shard in &shards {
        for i in 0..shard.len() {
            let id = shard.feature(i)[0] as usize;
            ensure(seen.insert(id), || format!("item {id} in two shards"))?;
        }
    }
    ensure(seen.len() == len, || format!("{} of {len} items covered", seen.len()))?;
    let sizes: Vec<usize> = shards.iter().map(Dataset::len).collect();
    let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
    ensure(hi - lo <= 1, || format!("shard sizes {sizes:?}"))
}

fn loss_non_increasing_on_separable_set(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let data = generate_synthetic_dataset(8, 4, 50, 0.0, s.random()).map_err(err)?;
    let arch = ModelArch::new(8, 16, 4).map_err(err)?;
    let hyper = TrainHyper {
        learning_rate: 0.01,
        momentum: 0.9,
        epochs: 3,
        batch_size: 8,
        seed: s.random(),
    };
    let trace = train_local_with(&arch.init(s.random()), &arch, &data, &hyper, |_| Ok(())).map_err(err)?;
    ensure(trace.epoch_losses.windows(2).all(|w| w[1] <= w[0]), || {
        format!("epoch losses {:?}", trace.epoch_losses)
    })
}

// ---- adversary ----

fn scale_update_affine(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let d = s.random_range(1..50);
    let m = random_models(&mut s, 2, d, 3.0);
    let gamma = s.random_range(0.0..5.0);
    let out = scale_update(&m[0], &m[1], gamma).map_err(err)?;
    for ((o, g), b) in out.values().iter().zip(m[0].values()).zip(m[1].values()) {
        ensure(((o - g) - gamma * (b - g)).abs() <= 1e-12 * (1.0 + gamma) * 3.0, || {
            format!("{o} - {g} vs {gamma} * ({b} - {g})")
        })?;
    }
    Ok(())
}

fn tiny_config(s: &mut Stream, clients: Vec<ClientSpec>, rounds: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::desk_scale(clients);
    c.arch = ModelArch {
        d_in: 4,
        hidden: 3,
        classes: 3,
    };
    c.dataset = DatasetSpec::Synthetic {
        d_in: 4,
        classes: 3,
        train_per_class: 30,
        validation_per_class: 5,
        spread: 1.0,
        seed: s.random(),
    };
    c.backdoor.source_class = 1;
    c.backdoor.target_class = 2;
    c.backdoor.trigger.indices = vec![0, 1];
    c.benign_hyper.batch_size = 8;
    c.benign_hyper.epochs = 1;
    c.total_rounds = rounds;
    c.experiment_seed = s.random();
    c
}

fn collusion_identical_across_clients_and_rounds(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let mut colluder = AttackSpec::of_kind(AttackKind::Collusion);
    colluder.collusion_weights = s.random_range(1..=20);
    let clients = (0..5)
        .map(|i| ClientSpec::new(i, if i < 2 { AttackSpec::default() } else { colluder.clone() }))
        .collect();
    let mut config = tiny_config(&mut s, clients, 3);
    // without local learning each submission is the global model plus the attack
    config.benign_hyper.learning_rate = 0.0;
    let exp = Experiment::prepare(config.clone()).map_err(err)?;
    let plan = exp.collusion_plan().ok_or("no collusion plan")?.clone();
    let again = Experiment::prepare(config).map_err(err)?;
    ensure(again.collusion_plan() == Some(&plan), || "plan differs between preparations".into())?;
    let mut global = exp.initial_model();
    let mut state = RoundState::default();
    let mut first: Option<Vec<f64>> = None;
    for round in 0..3 {
        let subs = exp.collect_submissions(&global, round, &mut state).map_err(err)?;
        for m in &subs.models[2..] {
            let offset: Vec<f64> = m.values().iter().zip(global.values()).map(|(a, g)| a - g).collect();
            match &first {
                None => first = Some(offset),
                Some(f) => ensure(f.iter().zip(&offset).all(|(a, b)| (a - b).abs() <= 1e-12), || {
                    format!("round {round}: colluder offsets differ")
                })?,
            }
        }
        let values = global.values().iter().map(|w| w + s.random_range(-0.1..0.1)).collect();
        global = ModelVector::new(values, global.shape_tag().clone()).map_err(err)?;
    }
    let offset = first.ok_or("no colluder submissions")?;
    let perturbed = attack_collusion(&exp.initial_model(), &plan).map_err(err)?;
    let expected: Vec<f64> = perturbed.values().iter().zip(exp.initial_model().values()).map(|(a, g)| a - g).collect();
    ensure(offset.iter().zip(&expected).all(|(a, b)| (a - b).abs() <= 1e-12), || {
        "offsets do not follow the shared plan".into()
    })
}

fn noisy_changes_nearly_every_coordinate(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let d = s.random_range(100..400);
    let m = random_models(&mut s, 1, d, 1.0).remove(0);
    let mut spec = AttackSpec::of_kind(AttackKind::Noisy);
    spec.noise_sigma = s.random_range(0.1..3.0);
    spec.noise_mu = s.random_range(-1.0..1.0);
    let out = attack_noisy(&m, &spec, &mut s).map_err(err)?;
    let changed = out.values().iter().zip(m.values()).filter(|(a, b)| a != b).count();
    ensure(changed as f64 >= 0.99 * d as f64, || format!("{changed} of {d} coordinates changed"))
}

fn gamma_non_decreasing(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let start = s.random_range(0.0..1.0);
    let mut spec = AttackSpec::of_kind(AttackKind::IncreasingScaling);
    spec.gamma_schedule = Some(GammaSchedule {
        start,
        end: start + s.random_range(0.0..2.0),
        ramp_end_round: s.random_range(1..300),
    });
    let mut last = f64::NEG_INFINITY;
    for round in 0..400 {
        let g = gamma_for_round(&spec, round).map_err(err)?;
        ensure(g >= last, || format!("gamma fell at round {round}: {last} -> {g}"))?;
        last = g;
    }
    Ok(())
}

fn attack_spec_validation(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let kinds = [AttackKind::Benign, AttackKind::Noisy, AttackKind::Collusion, AttackKind::Backdoor];
    let mut spec = AttackSpec::of_kind(kinds[s.random_range(0..kinds.len())]);
    spec.gamma_schedule = Some(GammaSchedule {
        start: 0.0,
        end: 0.5,
        ramp_end_round: 10,
    });
    ensure(spec.validate("clients[0]").is_err(), || format!("schedule accepted on {:?}", spec.kind))?;
    let mut spec = AttackSpec::of_kind(AttackKind::Noisy);
    spec.noise_sigma = -s.random_range(0.0..1.0);
    ensure(spec.validate("clients[0]").is_err(), || "non-positive sigma accepted".into())?;
    ensure(AttackSpec::of_kind(AttackKind::IncreasingScaling).validate("c").is_ok(), || "ramp default rejected".into())
}

// ---- simulator ----

fn membership_clients(s: &mut Stream, rounds: usize) -> Vec<ClientSpec> {
    let n = s.random_range(2..6);
    (0..n as u64)
        .map(|i| {
            let mut c = ClientSpec::new(i * 3 + 1, AttackSpec::default());
            if i > 0 {
                c.join_round = s.random_range(0..rounds);
            }
            c
        })
        .collect()
}

fn membership_conserved(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let rounds = s.random_range(2..5);
    let clients = membership_clients(&mut s, rounds);
    let config = tiny_config(&mut s, clients.clone(), rounds);
    let exp = Experiment::prepare(config).map_err(err)?;
    let records = exp.run().map_err(err)?.records;
    for r in &records {
        let expected = clients.iter().filter(|c| c.join_round <= r.round).count();
        ensure(r.active_clients == expected, || {
            format!("round {}: {} active, expected {expected}", r.round, r.active_clients)
        })?;
        let shards = exp.shard_assignment(r.round).map_err(err)?;
        ensure(shards.len() == expected, || format!("round {}: {} shards", r.round, shards.len()))?;
    }
    Ok(())
}

fn global_update_affine_for_every_rule(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let rule = Rule::ALL[s.random_range(0..Rule::ALL.len())];
    let clients = (0..7).map(|i| ClientSpec::new(i, AttackSpec::default())).collect();
    let mut config = tiny_config(&mut s, clients, 1);
    config.aggregator = AggregatorConfig {
        f_bound: 1,
        ..AggregatorConfig::with_rule(rule)
    };
    config.eta = if s.random_range(0..4) == 0 { 1.0 } else { s.random_range(0.01..1.0) };
    let exp = Experiment::prepare(config.clone()).map_err(err)?;
    let global = exp.initial_model();
    let subs = exp.collect_submissions(&global, 0, &mut RoundState::default()).map_err(err)?;
    let input = AggregationInput {
        data_sizes: Some(&subs.data_sizes),
        ..AggregationInput::new(&subs.models)
    };
    let agg = aggregate(&config.aggregator, input).map_err(err)?.aggregate;
    let (next, _) = exp.run_round(&global, 0, &mut RoundState::default()).map_err(err)?;
    let eta = config.eta;
    for ((n, g), a) in next.values().iter().zip(global.values()).zip(agg.values()) {
        let want = (1.0 - eta) * g + eta * a;
        ensure((n - want).abs() <= 1e-12 * want.abs().max(1.0), || {
            format!("{rule:?} eta {eta}: {n} vs {want}")
        })?;
    }
    Ok(())
}

fn experiment_deterministic(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let mut clients: Vec<ClientSpec> = (0..8).map(|i| ClientSpec::new(i, AttackSpec::default())).collect();
    clients[0].attack = AttackSpec::of_kind(AttackKind::Noisy);
    clients[7].join_round = 1;
    let mut config = tiny_config(&mut s, clients, 3);
    config.aggregator.rule = Rule::ALL[s.random_range(0..Rule::ALL.len())];
    config.aggregator.f_bound = 1;
    let strip = |records: Vec<RoundRecord>| -> Vec<RoundRecord> {
        records.into_iter().map(|r| RoundRecord { wall_time_ms: 0, ..r }).collect()
    };
    let a = strip(Experiment::prepare(config.clone()).and_then(|e| e.run()).map_err(err)?.records);
    let b = strip(Experiment::prepare(config).and_then(|e| e.run()).map_err(err)?.records);
    ensure(a == b, || "round records differ between runs".into())
}

fn round_weights_cover_active_clients(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let rounds = s.random_range(2..5);
    let mut clients = membership_clients(&mut s, rounds);
    if clients.len() > 2 && s.random::<bool>() {
        let last = clients.len() - 1;
        clients[last].leave_round = Some(clients[last].join_round + 1);
    }
    let mut config = tiny_config(&mut s, clients.clone(), rounds);
    config.aggregator.rule = [Rule::Simeon, Rule::Fedavg, Rule::CoordinateMedian][s.random_range(0..3)];
    let records = Experiment::prepare(config).and_then(|e| e.run()).map_err(err)?.records;
    for r in &records {
        let active: BTreeSet<u64> = clients.iter().filter(|c| c.is_active(r.round)).map(|c| c.client_id).collect();
        let keys: BTreeSet<u64> = r.client_weights.keys().copied().collect();
        ensure(keys == active, || format!("round {}: weights for {keys:?}, active {active:?}", r.round))?;
        let total: f64 = r.client_weights.values().sum();
        ensure((total - 1.0).abs() <= 1e-9, || format!("round {}: weights sum to {total}", r.round))?;
        ensure((0.0..=1.0).contains(&r.accuracy) && (0.0..=1.0).contains(&r.misclassification), || {
            format!("round {}: metrics out of range", r.round)
        })?;
    }
    Ok(())
}

fn experiment_config_validation(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let clients: Vec<ClientSpec> = (0..3).map(|i| ClientSpec::new(i, AttackSpec::default())).collect();
    let good = tiny_config(&mut s, clients, 5);
    ensure(good.validate().is_ok(), || "valid config rejected".into())?;
    let mut dup = good.clone();
    dup.clients[1].client_id = dup.clients[0].client_id;
    let mut late = good.clone();
    late.clients[1].join_round = 5 + s.random_range(0..3);
    let mut nobody = good.clone();
    for c in &mut nobody.clients {
        c.join_round = s.random_range(1..5);
    }
    let mut eta = good.clone();
    eta.eta = if s.random::<bool>() { 0.0 } else { 1.0 + s.random_range(1e-9..1.0) };
    for (what, c) in [("duplicate id", dup), ("late join", late), ("no initial client", nobody), ("eta", eta)] {
        match c.validate() {
            Err(e) if e.is_config() => {}
            other => return Err(format!("{what}: {other:?}")),
        }
    }
    Ok(())
}

// ---- configuration and output ----

fn presets_parse(_seed: u64) -> Result<(), String> {
    for (name, text) in PRESETS {
        parse_config_str(text, std::path::Path::new("."), name)
            .and_then(|c| c.validate())
            .map_err(|e| format!("{name}: {e}"))?;
    }
    Ok(())
}

fn metrics_csv_round_trip(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let records: Vec<RoundRecord> = (0..s.random_range(1..40))
        .map(|round| RoundRecord {
            round,
            accuracy: s.random_range(0.0..1.0),
            misclassification: if s.random::<bool>() { 0.0 } else { s.random_range(0.0..1.0) },
            client_weights: BTreeMap::new(),
            simeon_iterations: s.random_range(0..200),
            active_clients: s.random_range(1..40),
            wall_time_ms: s.random_range(0..100_000),
        })
        .collect();
    let timing = s.random::<bool>();
    let rows = parse_metrics_csv(&metrics_csv(&records, WriteOptions { timing })).map_err(err)?;
    ensure(rows.len() == records.len(), || "row count".into())?;
    let g9 = |x: f64| format!("{x:.8e}").parse::<f64>().unwrap();
    for (r, row) in records.iter().zip(&rows) {
        ensure(row.round == r.round && row.simeon_iterations == r.simeon_iterations && row.active_clients == r.active_clients, || {
            format!("integer fields of round {}", r.round)
        })?;
        ensure(row.accuracy == g9(r.accuracy) && row.misclassification == g9(r.misclassification), || {
            format!("round {}: {} vs {}", r.round, row.accuracy, r.accuracy)
        })?;
        ensure(row.wall_time_ms == if timing { r.wall_time_ms } else { 0 }, || "wall time".into())?;
    }
    Ok(())
}

fn config_hash_ignores_key_order(seed: u64) -> Result<(), String> {
    let mut s = rng::stream(seed);
    let mut top = vec![
        format!("name = \"h{}\"", s.random_range(0..100)),
        format!("rounds = {}", s.random_range(1..300)),
        format!("eta = {}", s.random_range(0.1..1.0)),
        format!("seed = {}", s.random_range(0..1000)),
    ];
    let mut agg = vec![
        "rule = \"krum\"".to_string(),
        format!("epsilon = {:e}", s.random_range(1e-9..1e-3)),
        format!("f_bound = {}", s.random_range(0..3)),
    ];
    let mut training = vec![format!("epochs = {}", s.random_range(1..4)), format!("batch_size = {}", s.random_range(1..128))];
    let render = |top: &[String], agg: &[String], training: &[String], agg_first: bool| {
        let a = format!("[aggregator]\n{}\n", agg.join("\n"));
        let t = format!("[training]\n{}\n", training.join("\n"));
        let (x, y) = if agg_first { (a, t) } else { (t, a) };
        format!("{}\n{x}{y}[[clients]]\ncount = 5\n", top.join("\n"))
    };
    let original = render(&top, &agg, &training, true);
    top.shuffle(&mut s);
    agg.shuffle(&mut s);
    training.shuffle(&mut s);
    let reordered = render(&top, &agg, &training, s.random());
    let h1 = config_hash(&original).map_err(err)?;
    let h2 = config_hash(&reordered).map_err(err)?;
    ensure(h1 == h2, || format!("hash changed:\n{original}\n---\n{reordered}"))?;
    let base = std::path::Path::new(".");
    let c1 = parse_config_str(&original, base, "x").map_err(err)?;
    let c2 = parse_config_str(&reordered, base, "x").map_err(err)?;
    ensure(c1 == c2, || "parsed configs differ".into())
}
