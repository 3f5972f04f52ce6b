//! Federated protocol driver.
//!
//! A round distributes the global model to every active client, collects
//! their submissions (honest training or an attack strategy), aggregates them
//! with the configured rule and applies `(1 - eta) * global + eta * F(...)`.
//! Shards are re-drawn whenever the active membership changes so that active
//! clients always hold disjoint, equally sized parts of the training set.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{
    attack_backdoor_train, attack_collusion, attack_noisy, gamma_for_round, AttackKind, AttackSpec,
    CollusionPlan,
};
use crate::aggregation::{aggregate, AggregationInput, AggregatorConfig, Rule};
use crate::error::{Error, Result};
use crate::learner::{
    generate_backdoor_set, generate_synthetic_split, predict, shard_dataset, train_local, Dataset,
    ModelArch, TrainHyper, TriggerSpec,
};
use crate::linalg::ModelVector;
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct ClientSpec {
    pub client_id: u64,
    pub attack: AttackSpec,
    pub join_round: usize,
    /// First round the client is absent again, if it ever leaves.
    pub leave_round: Option<usize>,
    /// Ordering key used when shards are handed out.
    pub shard_index: usize,
}

impl ClientSpec {
    pub fn new(client_id: u64, attack: AttackSpec) -> Self {
        ClientSpec {
            client_id,
            attack,
            join_round: 0,
            leave_round: None,
            shard_index: client_id as usize,
        }
    }

    pub fn is_active(&self, round: usize) -> bool {
        round >= self.join_round && self.leave_round.is_none_or(|l| round < l)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DatasetSpec {
    Synthetic {
        d_in: usize,
        classes: usize,
        train_per_class: usize,
        validation_per_class: usize,
        spread: f64,
        seed: u64,
    },
    Csv {
        train_path: String,
        validation_path: String,
        classes: usize,
    },
}

impl DatasetSpec {
    pub fn d_in(&self) -> Option<usize> {
        match self {
            DatasetSpec::Synthetic { d_in, .. } => Some(*d_in),
            DatasetSpec::Csv { .. } => None,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            DatasetSpec::Synthetic { classes, .. } | DatasetSpec::Csv { classes, .. } => *classes,
        }
    }

    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSpec::Synthetic {
                d_in,
                classes,
                train_per_class,
                validation_per_class,
                spread,
                seed,
            } => generate_synthetic_split(
                *d_in,
                *classes,
                *train_per_class,
                *validation_per_class,
                *spread,
                *seed,
            ),
            DatasetSpec::Csv {
                train_path,
                validation_path,
                classes,
            } => Ok((
                Dataset::from_csv(train_path, Some(*classes))?,
                Dataset::from_csv(validation_path, Some(*classes))?,
            )),
        }
    }
}

/// How the backdoor training and validation sets are built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackdoorEvalSpec {
    pub source_class: usize,
    pub target_class: usize,
    pub trigger: TriggerSpec,
    pub augment_factor: usize,
}

impl Default for BackdoorEvalSpec {
    fn default() -> Self {
        BackdoorEvalSpec {
            source_class: 1,
            target_class: 6,
            trigger: TriggerSpec::default(),
            augment_factor: 8,
        }
    }
}

/// Which model seeds the iterative filter's first variance estimate in round `k > 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimeonReference {
    #[default]
    GlobalModel,
    PreviousAggregate,
    /// No carried estimate: every round starts from the submissions' mean and
    /// common variance, as round 0 does.
    RoundMean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub arch: ModelArch,
    pub dataset: DatasetSpec,
    pub clients: Vec<ClientSpec>,
    pub aggregator: AggregatorConfig,
    pub eta: f64,
    pub total_rounds: usize,
    /// Honest training hyper-parameters; `seed` is replaced per client and round.
    pub benign_hyper: TrainHyper,
    pub experiment_seed: u64,
    pub backdoor: BackdoorEvalSpec,
    pub full_dataset_per_client: bool,
    pub simeon_reference: SimeonReference,
}

impl ExperimentConfig {
    /// Desk-scale defaults with the given clients.
    pub fn desk_scale(clients: Vec<ClientSpec>) -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            arch: ModelArch {
                d_in: 32,
                hidden: 16,
                classes: 10,
            },
            dataset: DatasetSpec::Synthetic {
                d_in: 32,
                classes: 10,
                train_per_class: 500,
                validation_per_class: 100,
                spread: DEFAULT_SPREAD,
                seed: 7,
            },
            clients,
            aggregator: AggregatorConfig::default(),
            eta: 1.0,
            total_rounds: 100,
            benign_hyper: TrainHyper::default(),
            experiment_seed: 42,
            backdoor: BackdoorEvalSpec::default(),
            full_dataset_per_client: false,
            simeon_reference: SimeonReference::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::config("eta", format!("{} is outside (0, 1]", self.eta)));
        }
        if self.total_rounds == 0 {
            return Err(Error::config("rounds", "must be at least 1"));
        }
        self.aggregator.validate()?;
        self.benign_hyper.validate()?;
        if self.arch.d_in == 0 || self.arch.hidden == 0 || self.arch.classes == 0 {
            return Err(Error::config("model", "d_in, hidden and classes must be positive"));
        }
        if let Some(d) = self.dataset.d_in() {
            if d != self.arch.d_in {
                return Err(Error::config("dataset.d_in", "does not match the model input width"));
            }
        }
        if self.dataset.classes() != self.arch.classes {
            return Err(Error::config("dataset.classes", "does not match the model output width"));
        }
        let bd = &self.backdoor;
        if bd.source_class >= self.arch.classes || bd.target_class >= self.arch.classes {
            return Err(Error::config("backdoor", "source/target class out of range"));
        }
        if bd.source_class == bd.target_class {
            return Err(Error::config("backdoor.target_class", "must differ from source_class"));
        }
        if bd.augment_factor == 0 {
            return Err(Error::config("backdoor.augment_factor", "must be at least 1"));
        }
        if let Some(i) = bd.trigger.indices.iter().find(|&&i| i >= self.arch.d_in) {
            return Err(Error::config("backdoor.trigger_indices", format!("{i} exceeds d_in")));
        }
        if self.clients.is_empty() {
            return Err(Error::config("clients", "at least one client is required"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, c) in self.clients.iter().enumerate() {
            let path = format!("clients[{i}]");
            if !seen.insert(c.client_id) {
                return Err(Error::config(path, format!("duplicate client id {}", c.client_id)));
            }
            if c.join_round >= self.total_rounds {
                return Err(Error::config(
                    format!("{path}.join_round"),
                    format!("{} is not before rounds = {}", c.join_round, self.total_rounds),
                ));
            }
            if c.leave_round.is_some_and(|l| l <= c.join_round) {
                return Err(Error::config(format!("{path}.leave_round"), "must exceed join_round"));
            }
            c.attack.validate(&path)?;
            if c.attack.kind == AttackKind::Collusion
                && c.attack.collusion_weights > self.arch.param_count()
            {
                return Err(Error::config(
                    format!("{path}.collusion_weights"),
                    "exceeds the model dimension",
                ));
            }
        }
        if !self.clients.iter().any(|c| c.join_round == 0) {
            return Err(Error::config("clients", "no client joins at round 0"));
        }
        if matches!(self.aggregator.rule, Rule::Krum | Rule::Bulyan) {
            let n = self.min_population();
            if n > 1 {
                self.aggregator
                    .check_population(n)
                    .map_err(|e| Error::config("aggregator.f_bound", e.to_string()))?;
            }
        }
        Ok(())
    }

    /// Fewest submissions any multi-client round aggregates (1 if none does).
    pub fn min_population(&self) -> usize {
        (0..self.total_rounds)
            .map(|r| self.clients.iter().filter(|c| c.is_active(r)).count())
            .filter(|&n| n > 1)
            .min()
            .unwrap_or(1)
    }

    pub fn next_client_id(&self) -> u64 {
        self.clients.iter().map(|c| c.client_id + 1).max().unwrap_or(0)
    }
}

/// Default cluster spread of the desk-scale synthetic task.
pub const DEFAULT_SPREAD: f64 = 1.5;

/// Appends `count` clients running `attack` that join at `join_round`.
/// Shards are redrawn over the enlarged membership from that round on.
pub fn inject_sybils(
    config: &ExperimentConfig,
    count: usize,
    join_round: usize,
    attack: AttackSpec,
) -> Result<ExperimentConfig> {
    let mut out = config.clone();
    let first = config.next_client_id();
    for k in 0..count as u64 {
        let id = first + k;
        if config.clients.iter().any(|c| c.client_id == id) {
            return Err(Error::config("sybil", format!("duplicate client id {id}")));
        }
        out.clients.push(ClientSpec {
            client_id: id,
            attack: attack.clone(),
            join_round,
            leave_round: None,
            shard_index: id as usize,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub accuracy: f64,
    pub misclassification: f64,
    pub client_weights: BTreeMap<u64, f64>,
    pub simeon_iterations: usize,
    pub active_clients: usize,
    pub wall_time_ms: u64,
}

impl RoundRecord {
    /// Combined weight of the given clients.
    pub fn weight_of(&self, ids: &[u64]) -> f64 {
        ids.iter().filter_map(|id| self.client_weights.get(id)).sum()
    }
}

/// Accuracy on the clean validation set and the fraction of triggered items
/// predicted as the attacker's target.
pub fn evaluate_round_metrics(
    model: &ModelVector,
    arch: &ModelArch,
    validation: &Dataset,
    backdoor_validation: &Dataset,
    target_class: usize,
) -> Result<(f64, f64)> {
    if validation.is_empty() || backdoor_validation.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let accuracy = crate::learner::evaluate_accuracy(model, arch, validation)?;
    let hits = predict(model, arch, backdoor_validation)?
        .into_iter()
        .filter(|&p| p == target_class)
        .count();
    Ok((accuracy, hits as f64 / backdoor_validation.len() as f64))
}

/// An experiment with its data materialised.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub train: Dataset,
    pub validation: Dataset,
    pub backdoor_train: Dataset,
    pub backdoor_validation: Dataset,
    collusion: Option<Arc<CollusionPlan>>,
}

/// Mutable state carried between rounds.
#[derive(Default)]
pub struct RoundState {
    shards: Option<(Vec<u64>, Vec<Dataset>)>,
    prev_aggregate: Option<ModelVector>,
}

pub struct Submissions {
    pub client_ids: Vec<u64>,
    pub models: Vec<ModelVector>,
    pub data_sizes: Vec<usize>,
}

pub struct ExperimentOutcome {
    pub records: Vec<RoundRecord>,
    pub final_model: ModelVector,
}

impl Experiment {
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (train, validation) = config.dataset.load()?;
        if train.d_in() != config.arch.d_in || validation.d_in() != config.arch.d_in {
            return Err(Error::config("dataset", "feature width does not match model.d_in"));
        }
        let bd = &config.backdoor;
        let seed = rng::mix(&[config.experiment_seed, 0xB4C]);
        let backdoor_train = generate_backdoor_set(
            &train,
            bd.source_class,
            bd.target_class,
            &bd.trigger,
            bd.augment_factor,
            seed,
        )?;
        let backdoor_validation = generate_backdoor_set(
            &validation,
            bd.source_class,
            bd.target_class,
            &bd.trigger,
            1,
            seed ^ 1,
        )?;
        let collusion = config
            .clients
            .iter()
            .find(|c| c.attack.kind == AttackKind::Collusion)
            .map(|c| {
                let a = &c.attack;
                match &a.collusion {
                    Some(plan) => Ok(plan.clone()),
                    None => CollusionPlan::draw(
                        config.arch.param_count(),
                        a.collusion_weights,
                        a.noise_mu,
                        a.noise_sigma,
                        rng::mix(&[config.experiment_seed, 0xC0]),
                    )
                    .map(Arc::new),
                }
            })
            .transpose()?;
        Ok(Experiment {
            config,
            train,
            validation,
            backdoor_train,
            backdoor_validation,
            collusion,
        })
    }

    pub fn initial_model(&self) -> ModelVector {
        self.config
            .arch
            .init(rng::mix(&[self.config.experiment_seed, 0x1A17]))
    }

    pub fn collusion_plan(&self) -> Option<&CollusionPlan> {
        self.collusion.as_deref()
    }

    /// Active clients at `round`, in aggregation order (by id).
    pub fn active_clients(&self, round: usize) -> Vec<&ClientSpec> {
        let mut active: Vec<&ClientSpec> = self
            .config
            .clients
            .iter()
            .filter(|c| c.is_active(round))
            .collect();
        active.sort_by_key(|c| c.client_id);
        active
    }

    /// Shards for the current membership, keyed by client id.
    fn shards_for<'s>(
        &self,
        active: &[&ClientSpec],
        state: &'s mut RoundState,
    ) -> Result<&'s (Vec<u64>, Vec<Dataset>)> {
        let mut by_slot: Vec<&ClientSpec> = active.to_vec();
        by_slot.sort_by_key(|c| (c.shard_index, c.client_id));
        let ids: Vec<u64> = by_slot.iter().map(|c| c.client_id).collect();
        let stale = state.shards.as_ref().is_none_or(|(cached, _)| *cached != ids);
        if stale {
            let mut key = vec![self.config.experiment_seed, 0x54A2D];
            key.extend(&ids);
            let shards = shard_dataset(&self.train, ids.len(), rng::mix(&key))?;
            state.shards = Some((ids, shards));
        }
        Ok(state.shards.as_ref().expect("shards cached"))
    }

    pub fn shard_assignment(&self, round: usize) -> Result<BTreeMap<u64, Dataset>> {
        let active = self.active_clients(round);
        let mut state = RoundState::default();
        let (ids, shards) = self.shards_for(&active, &mut state)?;
        Ok(ids.iter().copied().zip(shards.iter().cloned()).collect())
    }

    fn submission(
        &self,
        client: &ClientSpec,
        shard: &Dataset,
        global: &ModelVector,
        round: usize,
        active: &[&ClientSpec],
    ) -> Result<ModelVector> {
        let cfg = &self.config;
        let mut stream = rng::client_stream(cfg.experiment_seed, client.client_id, round as u64);
        let hyper = TrainHyper {
            seed: stream.random(),
            ..cfg.benign_hyper
        };
        let data = if cfg.full_dataset_per_client {
            &self.train
        } else {
            shard
        };
        let attack = &client.attack;
        match attack.kind {
            AttackKind::Benign => train_local(global, &cfg.arch, data, &hyper),
            AttackKind::Noisy => {
                let trained = train_local(global, &cfg.arch, data, &hyper)?;
                attack_noisy(&trained, attack, &mut stream)
            }
            AttackKind::Collusion => {
                let trained = train_local(global, &cfg.arch, data, &hyper)?;
                let plan = self
                    .collusion
                    .as_ref()
                    .ok_or_else(|| Error::Internal("collusion plan missing".into()))?;
                attack_collusion(&trained, plan)
            }
            AttackKind::Backdoor | AttackKind::IncreasingScaling => {
                let gamma = if attack.model_replacement {
                    let attackers = active.iter().filter(|c| c.attack.kind.trains_backdoor()).count();
                    active.len() as f64 / (attackers as f64 * cfg.eta)
                } else {
                    gamma_for_round(attack, round)?
                };
                attack_backdoor_train(
                    global,
                    &cfg.arch,
                    data,
                    &self.backdoor_train,
                    attack,
                    &hyper,
                    gamma,
                    &mut stream,
                )
            }
        }
    }

    /// Every active client's submission for `round`, ordered by client id.
    pub fn collect_submissions(
        &self,
        global: &ModelVector,
        round: usize,
        state: &mut RoundState,
    ) -> Result<Submissions> {
        let cfg = &self.config;
        let active = self.active_clients(round);
        if active.is_empty() {
            return Err(Error::Precondition("no active clients".into()));
        }
        let (ids, shards) = self.shards_for(&active, state)?;
        let shard_of: BTreeMap<u64, &Dataset> = ids.iter().copied().zip(shards.iter()).collect();
        let models = active
            .par_iter()
            .map(|c| self.submission(c, shard_of[&c.client_id], global, round, &active))
            .collect::<Result<_>>()?;
        let data_sizes = active
            .iter()
            .map(|c| {
                if cfg.full_dataset_per_client {
                    self.train.len()
                } else {
                    shard_of[&c.client_id].len()
                }
            })
            .collect();
        Ok(Submissions {
            client_ids: active.iter().map(|c| c.client_id).collect(),
            models,
            data_sizes,
        })
    }

    /// One training round; returns the new global model and the round's metrics.
    pub fn run_round(
        &self,
        global: &ModelVector,
        round: usize,
        state: &mut RoundState,
    ) -> Result<(ModelVector, RoundRecord)> {
        self.run_round_inner(global, round, state)
            .map_err(|e| e.in_round(round))
    }

    fn run_round_inner(
        &self,
        global: &ModelVector,
        round: usize,
        state: &mut RoundState,
    ) -> Result<(ModelVector, RoundRecord)> {
        let cfg = &self.config;
        if round >= cfg.total_rounds {
            return Err(Error::Precondition(format!(
                "round {round} is past the configured {} rounds",
                cfg.total_rounds
            )));
        }
        let started = Instant::now();
        let Submissions {
            client_ids,
            models: submissions,
            data_sizes: sizes,
        } = self.collect_submissions(global, round, state)?;

        let (aggregate_model, weights, iterations) = if submissions.len() == 1 {
            (submissions[0].clone(), vec![1.0], 0)
        } else {
            cfg.aggregator.check_population(submissions.len())?;
            let prev = match cfg.simeon_reference {
                SimeonReference::GlobalModel => Some(global),
                SimeonReference::PreviousAggregate => Some(state.prev_aggregate.as_ref().unwrap_or(global)),
                SimeonReference::RoundMean => None,
            };
            let k = if prev.is_some() { round } else { 0 };
            let input = AggregationInput {
                models: &submissions,
                prev_estimate: prev.filter(|_| k > 0),
                round: k,
                data_sizes: Some(&sizes),
            };
            let result = aggregate(&cfg.aggregator, input)?;
            (result.aggregate, result.client_weights, result.iterations)
        };

        let new_global = if cfg.eta == 1.0 {
            aggregate_model.clone()
        } else {
            global
                .map(|g| (1.0 - cfg.eta) * g)?
                .add_scaled(&aggregate_model, cfg.eta)?
        };
        state.prev_aggregate = Some(aggregate_model);

        let (accuracy, misclassification) = evaluate_round_metrics(
            &new_global,
            &cfg.arch,
            &self.validation,
            &self.backdoor_validation,
            cfg.backdoor.target_class,
        )?;
        let active_clients = client_ids.len();
        let client_weights = client_ids.into_iter().zip(weights).collect();
        let record = RoundRecord {
            round,
            accuracy,
            misclassification,
            client_weights,
            simeon_iterations: if cfg.aggregator.rule == Rule::Simeon {
                iterations
            } else {
                0
            },
            active_clients,
            wall_time_ms: started.elapsed().as_millis() as u64,
        };
        Ok((new_global, record))
    }

    pub fn run(&self) -> Result<ExperimentOutcome> {
        let mut global = self.initial_model();
        let mut state = RoundState::default();
        let mut records = Vec::with_capacity(self.config.total_rounds);
        for round in 0..self.config.total_rounds {
            let (next, record) = self.run_round(&global, round, &mut state)?;
            global = next;
            records.push(record);
        }
        Ok(ExperimentOutcome {
            records,
            final_model: global,
        })
    }

    /// Ids of clients whose behaviour is not benign.
    pub fn byzantine_ids(&self) -> Vec<u64> {
        self.config
            .clients
            .iter()
            .filter(|c| c.attack.kind.is_byzantine())
            .map(|c| c.client_id)
            .collect()
    }
}

/// Runs every round of `config` and returns the per-round log.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RoundRecord>> {
    Ok(Experiment::prepare(config.clone())?.run()?.records)
}
