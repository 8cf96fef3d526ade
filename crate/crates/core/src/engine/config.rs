use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregatorKind, MomentumState};
use crate::error::{FedError, Result};
use crate::hyper::{HyperKind, HyperParams};
use crate::partition::{PartitionSpec, DEFAULT_BINS, DEFAULT_LARGEST_K};
use crate::selection::SelectorKind;
use crate::synthtask::{ScanGenerator, SizeParams, TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_PIXELS_PER_SCAN};

pub const DEFAULT_ROUNDS: usize = 70;
pub const DEFAULT_SCANS: usize = 341;

/// Full declarative description of one run. Every block has defaults, and
/// unknown keys anywhere are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub rounds: usize,
    pub dataset: DatasetConfig,
    pub partition: PartitionConfig,
    pub aggregator: AggregatorConfig,
    pub selector: SelectorConfig,
    pub hyper: HyperConfig,
    pub time_model: TimeModelConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rounds: DEFAULT_ROUNDS,
            dataset: DatasetConfig::default(),
            partition: PartitionConfig::default(),
            aggregator: AggregatorConfig::default(),
            selector: SelectorConfig::default(),
            hyper: HyperConfig::default(),
            time_model: TimeModelConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_scans: usize,
    pub grid_size: usize,
    pub mean_radius: f64,
    pub radius_spread: f64,
    pub noise: f64,
    pub separation: f64,
    pub pixels_per_scan: usize,
    /// Scans per local mini-batch.
    pub batch_size: usize,
    pub hidden: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_scans: DEFAULT_SCANS,
            grid_size: 32,
            mean_radius: 9.0,
            radius_spread: 3.0,
            noise: 0.3,
            separation: 1.0,
            pixels_per_scan: DEFAULT_PIXELS_PER_SCAN,
            batch_size: DEFAULT_BATCH_SIZE,
            hidden: 16,
        }
    }
}

impl DatasetConfig {
    pub fn generator(&self) -> ScanGenerator {
        ScanGenerator {
            grid_size: self.grid_size,
            noise: self.noise,
            separation: self.separation,
        }
    }

    pub fn size_params(&self) -> SizeParams {
        SizeParams {
            mean_radius: self.mean_radius,
            radius_spread: self.radius_spread,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    /// Institution shares; `None` uses the built-in 14-institution profile.
    pub proportions: Option<Vec<f64>>,
    pub artificial: bool,
    pub bins: usize,
    pub largest_k: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            proportions: None,
            artificial: false,
            bins: DEFAULT_BINS,
            largest_k: DEFAULT_LARGEST_K,
        }
    }
}

impl PartitionConfig {
    pub fn spec(&self) -> PartitionSpec {
        PartitionSpec {
            proportions: self
                .proportions
                .clone()
                .unwrap_or_else(crate::partition::default_proportions),
            artificial: self.artificial,
            artificial_bins: self.bins,
            largest_k: self.largest_k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregatorConfig {
    pub name: String,
    /// Server momentum coefficient.
    pub beta: f64,
    /// Server step size for momentum and reduced FedNova.
    pub gamma: Option<f64>,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self {
            name: AggregatorKind::FedAvg.name().into(),
            beta: MomentumState::DEFAULT_BETA,
            gamma: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorConfig {
    pub name: String,
    pub k: Option<usize>,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            name: SelectorKind::All.name().into(),
            k: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperConfig {
    pub name: String,
    /// Initial learning rate; defaults depend on the policy.
    pub lr0: Option<f64>,
    pub epochs: usize,
    pub e0: usize,
    pub patience: usize,
    pub decay_factor: f64,
    /// Multiplier from the nominal learning rate to the local SGD step.
    pub lr_scale: f64,
}

/// Nominal learning rates are quoted at adaptive-optimizer scale; plain SGD
/// on the per-pixel MLP needs steps this much larger to move at all.
pub const DEFAULT_LR_SCALE: f64 = 20_000.0;

impl Default for HyperConfig {
    fn default() -> Self {
        let d = HyperParams::defaults(HyperKind::Constant);
        Self {
            name: HyperKind::Constant.name().into(),
            lr0: None,
            epochs: d.epochs,
            e0: d.e0,
            patience: d.patience,
            decay_factor: d.decay_factor,
            lr_scale: DEFAULT_LR_SCALE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeModelConfig {
    /// Seconds of communication per collaborator per round.
    pub comm_overhead: f64,
    /// Seconds per local SGD step at speed 1.
    pub step_cost: f64,
    /// Seconds the server spends aggregating.
    pub agg_cost: f64,
    /// Per-collaborator speed factors; missing ids run at 1.0.
    pub speeds: BTreeMap<String, f64>,
}

impl Default for TimeModelConfig {
    fn default() -> Self {
        Self {
            comm_overhead: 1.0,
            step_cost: 0.1,
            agg_cost: 0.1,
            speeds: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<String>,
    pub workers: Option<usize>,
}

/// Strategy ids and parameters after validation.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub aggregator: AggregatorKind,
    pub selector: SelectorKind,
    pub hyper: HyperParams,
    pub train_template: TrainConfig,
}

impl ExperimentConfig {
    /// Small profile for tests and quick comparisons: 40 scans on 32x32
    /// grids, the default 14-institution split, 30 rounds.
    pub fn desk_profile() -> Self {
        Self {
            rounds: 30,
            dataset: DatasetConfig {
                n_scans: 40,
                ..DatasetConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn resolve(&self) -> Result<Resolved> {
        if self.rounds == 0 {
            return Err(FedError::Config("rounds must be at least 1".into()));
        }
        let aggregator: AggregatorKind = self.aggregator.name.parse()?;
        let selector: SelectorKind = self.selector.name.parse()?;
        let kind: HyperKind = self.hyper.name.parse()?;
        let hyper = HyperParams {
            kind,
            lr0: self.hyper.lr0.unwrap_or_else(|| kind.default_lr()),
            epochs: self.hyper.epochs,
            e0: self.hyper.e0,
            patience: self.hyper.patience,
            decay_factor: self.hyper.decay_factor,
        };
        if !(0.0..1.0).contains(&self.aggregator.beta) {
            return Err(FedError::Config(format!(
                "aggregator.beta must lie in [0, 1), got {}",
                self.aggregator.beta
            )));
        }
        if let Some(g) = self.aggregator.gamma {
            if !(g > 0.0) {
                return Err(FedError::Config(format!("aggregator.gamma must be positive, got {g}")));
            }
        }
        if self.selector.k == Some(0) {
            return Err(FedError::Config("selector.k must be at least 1".into()));
        }
        let d = &self.dataset;
        if d.hidden == 0 {
            return Err(FedError::Config("dataset.hidden must be at least 1".into()));
        }
        if !(d.noise > 0.0) {
            return Err(FedError::Config(format!("dataset.noise must be positive, got {}", d.noise)));
        }
        if !(self.hyper.lr_scale > 0.0) || !self.hyper.lr_scale.is_finite() {
            return Err(FedError::Config(format!(
                "hyper.lr_scale must be positive, got {}",
                self.hyper.lr_scale
            )));
        }
        let train_template = TrainConfig {
            lr: hyper.lr0 * self.hyper.lr_scale,
            epochs: 1,
            batch_size: d.batch_size,
            pixels_per_scan: d.pixels_per_scan,
        };
        train_template
            .validate()
            .map_err(|e| FedError::Config(e.to_string()))?;
        let tm = &self.time_model;
        for (name, v) in [
            ("comm_overhead", tm.comm_overhead),
            ("step_cost", tm.step_cost),
            ("agg_cost", tm.agg_cost),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(FedError::Config(format!("time_model.{name} must be positive, got {v}")));
            }
        }
        if let Some((id, v)) = tm.speeds.iter().find(|(_, v)| !(**v > 0.0)) {
            return Err(FedError::Config(format!("time_model.speeds.{id} must be positive, got {v}")));
        }
        if self.output.workers == Some(0) {
            return Err(FedError::Config("output.workers must be at least 1".into()));
        }
        self.partition.spec().validate()?;
        Ok(Resolved {
            aggregator,
            selector,
            hyper,
            train_template,
        })
    }
}
