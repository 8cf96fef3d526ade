use rand::seq::SliceRandom;

use super::model::MlpModel;
use super::scan::{Sample, Scan};
use crate::aggregation::Update;
use crate::error::{FedError, Result};
use crate::rng::{stream, tag};

/// Loss above which a local run is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e6;
pub const DEFAULT_PIXELS_PER_SCAN: usize = 64;
pub const DEFAULT_BATCH_SIZE: usize = 8;

/// Local SGD settings. `batch_size` counts scans per mini-batch; each scan
/// contributes its fixed pixel subsample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub pixels_per_scan: usize,
}

impl TrainConfig {
    pub fn new(lr: f64, epochs: usize, batch_size: usize) -> Result<Self> {
        let cfg = Self {
            lr,
            epochs,
            batch_size,
            pixels_per_scan: DEFAULT_PIXELS_PER_SCAN,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        // lr = 0 is allowed for fixed-point checks; negative or NaN is not.
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(FedError::Usage(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.pixels_per_scan == 0 {
            return Err(FedError::Usage(format!(
                "epochs ({}), batch size ({}) and pixels per scan ({}) must be at least 1",
                self.epochs, self.batch_size, self.pixels_per_scan
            )));
        }
        Ok(())
    }
}

/// Number of SGD steps `local_train` takes for `n_scans` scans.
pub fn local_steps(epochs: usize, n_scans: usize, batch_size: usize) -> usize {
    epochs * n_scans.div_ceil(batch_size.min(n_scans).max(1))
}

/// Identifies a training job in error messages.
#[derive(Debug, Clone, Copy)]
pub struct JobTag<'a> {
    pub collaborator: &'a str,
    pub round: usize,
}

/// Runs `cfg.epochs` epochs of mini-batch SGD over `shard` starting from
/// `model`. The returned delta follows the `start - end` convention; the
/// reported loss is the last epoch's sample-weighted mean of pre-step batch
/// losses.
pub fn local_train(
    model: &MlpModel,
    shard: &[Scan],
    cfg: &TrainConfig,
    rng_seed: u64,
    job: JobTag<'_>,
) -> Result<(Update, MlpModel)> {
    if shard.is_empty() {
        return Err(FedError::Usage(format!(
            "collaborator {} has no training scans",
            job.collaborator
        )));
    }
    cfg.validate()?;

    let per_scan: Vec<Vec<Sample>> = shard
        .iter()
        .map(|s| s.pixel_subsample(cfg.pixels_per_scan))
        .collect();
    let batch_size = cfg.batch_size.min(shard.len());
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut rng = stream(rng_seed, &[tag::TRAIN]);

    let mut current = model.clone();
    let mut tau = 0;
    let mut epoch_loss = 0.0;
    let mut batch = Vec::with_capacity(batch_size * cfg.pixels_per_scan);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(batch_size) {
            batch.clear();
            for &i in chunk {
                batch.extend_from_slice(&per_scan[i]);
            }
            let (loss, grad) = current.loss_and_gradient(&batch)?;
            if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
                return Err(FedError::Divergence {
                    collaborator: job.collaborator.to_string(),
                    round: job.round,
                    loss,
                });
            }
            weighted += loss * batch.len() as f64;
            seen += batch.len();
            current.sgd_step(cfg.lr, &grad);
            tau += 1;
        }
        epoch_loss = weighted / seen as f64;
    }
    if !current.params().is_finite() {
        return Err(FedError::Divergence {
            collaborator: job.collaborator.to_string(),
            round: job.round,
            loss: f64::NAN,
        });
    }

    let delta = model.params().sub(current.params())?;
    let update = Update {
        collaborator_id: job.collaborator.to_string(),
        delta,
        tau,
        n_samples: shard.len(),
        train_loss: epoch_loss,
        val_metrics: None,
    };
    Ok((update, current))
}
