//! Round orchestration: selection, local training, aggregation, evaluation
//! and hyperparameter updates under a simulated synchronous clock.

mod config;
mod eval;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

pub use config::{
    AggregatorConfig, DatasetConfig, ExperimentConfig, HyperConfig, OutputConfig, PartitionConfig,
    Resolved, SelectorConfig, TimeModelConfig, DEFAULT_LR_SCALE, DEFAULT_ROUNDS, DEFAULT_SCANS,
};
pub use eval::ScanMetrics;

use crate::aggregation::{AggregationBatch, Aggregator, Update};
use crate::error::{FedError, Result};
use crate::hyper::{HyperDecision, HyperScheduler};
use crate::metrics::MetricRecord;
use crate::numerics::ParamVector;
use crate::partition::{build_shards, Shard};
use crate::rng::{derive_seed, stable_hash, stream, tag};
use crate::selection::{
    default_subset_size, select_all, select_faster_than_random, select_random_subset, SelectorKind,
    TimeHistory,
};
use crate::synthtask::{local_train, JobTag, MlpModel, TrainConfig};

/// Simulated cost model for one collaborator-round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeModel {
    pub comm_overhead: f64,
    pub step_cost: f64,
}

/// `comm_overhead + step_cost * tau / speed_factor` seconds.
pub fn simulate_round_time(speed_factor: f64, tau: usize, tm: &TimeModel) -> f64 {
    tm.comm_overhead + tm.step_cost * tau as f64 / speed_factor
}

/// Synchronous barrier: the slowest selected collaborator plus the server's
/// aggregation cost.
pub fn barrier_time(collaborator_times: &[f64], agg_cost: f64) -> f64 {
    collaborator_times.iter().copied().fold(0.0, f64::max) + agg_cost
}

/// A collaborator's static data and hardware.
#[derive(Debug, Clone)]
pub struct CollaboratorState {
    pub shard: Shard,
    pub speed_factor: f64,
}

impl CollaboratorState {
    pub fn id(&self) -> &str {
        &self.shard.collaborator_id
    }
}

/// What one collaborator did in a round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollaboratorRound {
    pub collaborator_id: String,
    pub train_loss: f64,
    pub tau: usize,
    pub round_time: f64,
}

/// Record of one completed round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    pub selected: Vec<String>,
    pub hyper: HyperDecision,
    pub collaborators: Vec<CollaboratorRound>,
    /// Aggregated model on the pooled validation scans.
    pub metrics: MetricRecord,
    /// Mean pixel cross-entropy of the aggregated model on validation scans.
    pub agg_loss: f64,
    /// Sample-weighted mean of the selected collaborators' training losses.
    pub train_loss: f64,
    pub round_time: f64,
    pub cum_time: f64,
    pub scan_metrics: Vec<ScanMetrics>,
}

/// Mutable state of a running experiment. Only the orchestrator touches it,
/// between training barriers.
pub struct Experiment {
    config: ExperimentConfig,
    resolved: Resolved,
    collaborators: Vec<CollaboratorState>,
    global: MlpModel,
    aggregator: Aggregator,
    hyper: HyperScheduler,
    history: TimeHistory,
    time_model: TimeModel,
    agg_cost: f64,
    round: usize,
    cum_time: f64,
    prev_mean_dice: Option<f64>,
    pool: rayon::ThreadPool,
}

impl Experiment {
    /// Builds data, shards and initial model. `workers` bounds the number of
    /// threads used for training and evaluation; it never affects results.
    pub fn new(config: &ExperimentConfig, workers: usize) -> Result<Self> {
        let resolved = config.resolve()?;
        let d = &config.dataset;
        let dataset = d
            .generator()
            .generate_dataset(d.n_scans, derive_seed(config.seed, &[tag::DATASET]), d.size_params())
            .map_err(|e| FedError::Config(e.to_string()))?;
        let shards = build_shards(&dataset, &config.partition.spec(), derive_seed(config.seed, &[tag::PARTITION]))?;
        for id in config.time_model.speeds.keys() {
            if !shards.iter().any(|s| &s.collaborator_id == id) {
                return Err(FedError::Config(format!("time_model.speeds names unknown collaborator `{id}`")));
            }
        }
        if let Some(k) = config.selector.k {
            if k > shards.len() {
                return Err(FedError::Config(format!(
                    "selector.k = {k} exceeds the {} collaborators",
                    shards.len()
                )));
            }
        }
        let collaborators: Vec<CollaboratorState> = shards
            .into_iter()
            .map(|shard| CollaboratorState {
                speed_factor: config.time_model.speeds.get(&shard.collaborator_id).copied().unwrap_or(1.0),
                shard,
            })
            .collect();

        let global = MlpModel::init(d.hidden, derive_seed(config.seed, &[tag::INIT]));
        let aggregator = Aggregator::new(
            resolved.aggregator,
            global.params(),
            config.aggregator.beta,
            config.aggregator.gamma,
        )?;
        let hyper = HyperScheduler::new(resolved.hyper)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| FedError::Config(format!("cannot start worker pool: {e}")))?;
        Ok(Self {
            config: config.clone(),
            resolved,
            collaborators,
            global,
            aggregator,
            hyper,
            history: TimeHistory::new(),
            time_model: TimeModel {
                comm_overhead: config.time_model.comm_overhead,
                step_cost: config.time_model.step_cost,
            },
            agg_cost: config.time_model.agg_cost,
            round: 0,
            cum_time: 0.0,
            prev_mean_dice: None,
            pool,
        })
    }

    pub fn collaborators(&self) -> &[CollaboratorState] {
        &self.collaborators
    }

    pub fn global(&self) -> &MlpModel {
        &self.global
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn history(&self) -> &TimeHistory {
        &self.history
    }

    fn select(&self) -> Result<Vec<String>> {
        let ids: Vec<String> = self.collaborators.iter().map(|c| c.id().to_string()).collect();
        let mut rng = stream(self.config.seed, &[tag::SELECT, self.round as u64]);
        match self.resolved.selector {
            SelectorKind::All => select_all(&ids),
            SelectorKind::RandomSubset => {
                let k = self.config.selector.k.unwrap_or_else(|| default_subset_size(ids.len()));
                select_random_subset(&ids, k, &mut rng)
            }
            SelectorKind::FasterThanRandom => {
                select_faster_than_random(&ids, &self.history, self.round, &mut rng)
            }
        }
    }

    /// Runs the next round with the scheduler's hyperparameters.
    pub fn run_round(&mut self) -> Result<RoundLog> {
        let decision = self.hyper.decision()?;
        self.run_round_with(decision)
    }

    /// Runs the next round with explicit hyperparameters. The scheduler is
    /// still updated afterwards.
    pub fn run_round_with(&mut self, decision: HyperDecision) -> Result<RoundLog> {
        let selected = self.select()?;
        let by_id: BTreeMap<&str, &CollaboratorState> =
            self.collaborators.iter().map(|c| (c.id(), c)).collect();
        let cfg = TrainConfig {
            lr: decision.lr * self.config.hyper.lr_scale,
            epochs: decision.epochs,
            ..self.resolved.train_template
        };
        let want_local_val = self.resolved.aggregator.filters_improved();
        let seed = self.config.seed;
        let round = self.round;
        let global = &self.global;

        let jobs: Vec<&CollaboratorState> = selected.iter().map(|id| by_id[id.as_str()]).collect();
        let results: Vec<Result<Update>> = self.pool.install(|| {
            jobs.par_iter()
                .map(|collab| {
                    let id = collab.id();
                    let train_seed = derive_seed(seed, &[tag::TRAIN, stable_hash(id.as_bytes()), round as u64]);
                    let (mut update, local) = local_train(
                        global,
                        &collab.shard.train,
                        &cfg,
                        train_seed,
                        JobTag { collaborator: id, round },
                    )?;
                    if want_local_val {
                        let scans: Vec<_> = collab.shard.validation.iter().collect();
                        update.val_metrics = Some(eval::evaluate(&local, &scans)?.mean_record()?);
                    }
                    Ok(update)
                })
                .collect()
        });
        let updates = results.into_iter().collect::<Result<Vec<Update>>>()?;

        let mut collaborators = Vec::with_capacity(updates.len());
        for u in &updates {
            let speed = by_id[u.collaborator_id.as_str()].speed_factor;
            let t = simulate_round_time(speed, u.tau, &self.time_model);
            collaborators.push(CollaboratorRound {
                collaborator_id: u.collaborator_id.clone(),
                train_loss: u.train_loss,
                tau: u.tau,
                round_time: t,
            });
        }
        let times: Vec<f64> = collaborators.iter().map(|c| c.round_time).collect();
        let round_time = barrier_time(&times, self.agg_cost);
        let total_n: usize = updates.iter().map(|u| u.n_samples).sum();
        let train_loss = updates
            .iter()
            .map(|u| u.train_loss * u.n_samples as f64)
            .sum::<f64>()
            / total_n as f64;

        let batch = AggregationBatch::new(updates, self.prev_mean_dice)?;
        let next: ParamVector = self.aggregator.aggregate(self.global.params(), &batch)?;
        let next = MlpModel::from_params(next).map_err(|e| FedError::Round(format!("aggregated model rejected: {e}")))?;

        let (scans, owners): (Vec<_>, Vec<&str>) = self
            .collaborators
            .iter()
            .flat_map(|c| c.shard.validation.iter().map(move |s| (s, c.id())))
            .unzip();
        let evaluation = self.pool.install(|| eval::evaluate(&next, &scans))?;
        let metrics = evaluation.mean_record()?;
        let scan_metrics = scans
            .iter()
            .zip(&owners)
            .zip(&evaluation.records)
            .map(|((s, owner), rec)| ScanMetrics {
                collaborator_id: owner.to_string(),
                scan_id: s.id,
                record: *rec,
            })
            .collect();

        for c in &collaborators {
            self.history.record(&c.collaborator_id, round, c.round_time)?;
        }
        self.hyper.observe(train_loss, metrics.mean_dice)?;
        self.global = next;
        self.prev_mean_dice = Some(metrics.mean_dice);
        self.cum_time += round_time;
        self.round += 1;

        collaborators.sort_by(|a, b| a.collaborator_id.cmp(&b.collaborator_id));
        Ok(RoundLog {
            round,
            selected,
            hyper: decision,
            collaborators,
            metrics,
            agg_loss: evaluation.mean_loss(),
            train_loss,
            round_time,
            cum_time: self.cum_time,
            scan_metrics,
        })
    }
}

/// Logs of an experiment that stopped early, plus the reason.
#[derive(Debug, Clone)]
pub struct PartialRun {
    pub logs: Vec<RoundLog>,
    pub error: FedError,
}

/// Runs every configured round. Configuration problems fail before round 0
/// with no logs; a failing round returns the logs completed so far.
pub fn run_experiment(config: &ExperimentConfig, workers: usize) -> std::result::Result<Vec<RoundLog>, PartialRun> {
    let mut exp = Experiment::new(config, workers).map_err(|error| PartialRun { logs: Vec::new(), error })?;
    let mut logs = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        match exp.run_round() {
            Ok(log) => logs.push(log),
            Err(error) => return Err(PartialRun { logs, error }),
        }
    }
    Ok(logs)
}

/// Area under the (runtime, mean Dice) curve with runtime rescaled to [0, 1]
/// between the first and last logged rounds (trapezoid rule). A single round
/// scores its own mean Dice.
pub fn convergence_score(logs: &[RoundLog]) -> Result<f64> {
    let points: Vec<(f64, f64)> = logs.iter().map(|l| (l.cum_time, l.metrics.mean_dice)).collect();
    curve_area(&points)
}

/// Normalized trapezoidal area of `(time, value)` points.
pub fn curve_area(points: &[(f64, f64)]) -> Result<f64> {
    let (first, last) = match (points.first(), points.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(FedError::Usage("convergence score of an empty log".into())),
    };
    let span = last.0 - first.0;
    if points.len() == 1 || !(span > 0.0) {
        return Ok(points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64);
    }
    let area: f64 = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    Ok(area / span)
}

/// First round (1-based count of rounds run) at which the aggregated mean
/// Dice reaches `threshold`.
pub fn rounds_to_reach(logs: &[RoundLog], threshold: f64) -> Option<usize> {
    logs.iter()
        .position(|l| l.metrics.mean_dice >= threshold)
        .map(|i| i + 1)
}
