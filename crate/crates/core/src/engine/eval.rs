use rayon::prelude::*;

use crate::error::Result;
use crate::metrics::{composite_masks, MetricRecord};
use crate::synthtask::{MlpModel, Scan};

/// Metrics of one validation scan under some model.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanMetrics {
    pub collaborator_id: String,
    pub scan_id: usize,
    pub record: MetricRecord,
}

/// Per-scan metrics plus the summed cross-entropy and pixel count.
pub(crate) struct Evaluation {
    pub records: Vec<MetricRecord>,
    pub loss_sum: f64,
    pub pixels: usize,
}

impl Evaluation {
    pub fn mean_loss(&self) -> f64 {
        self.loss_sum / self.pixels as f64
    }

    /// Mean record over scans (equivalently, collaborator records weighted
    /// by validation-set size).
    pub fn mean_record(&self) -> Result<MetricRecord> {
        let weighted: Vec<(MetricRecord, f64)> = self.records.iter().map(|r| (*r, 1.0)).collect();
        MetricRecord::weighted_mean(&weighted)
    }
}

fn evaluate_scan(model: &MlpModel, scan: &Scan) -> Result<(MetricRecord, f64)> {
    let samples = scan.all_samples();
    let loss = model.loss(&samples)? * samples.len() as f64;
    let pred: Vec<u8> = scan.features.iter().map(|f| model.predict(f)).collect();
    let record = MetricRecord::evaluate(
        &composite_masks(&pred, scan.grid_size)?,
        &composite_masks(&scan.labels, scan.grid_size)?,
    )?;
    Ok((record, loss))
}

/// Scores `model` on every pixel of every scan. Scans are processed in
/// parallel on the current rayon pool; the reduction runs in input order.
pub(crate) fn evaluate(model: &MlpModel, scans: &[&Scan]) -> Result<Evaluation> {
    let per_scan: Vec<(MetricRecord, f64)> = scans
        .par_iter()
        .map(|s| evaluate_scan(model, s))
        .collect::<Result<_>>()?;
    let mut loss_sum = 0.0;
    let mut records = Vec::with_capacity(per_scan.len());
    for (rec, loss) in per_scan {
        loss_sum += loss;
        records.push(rec);
    }
    Ok(Evaluation {
        records,
        loss_sum,
        pixels: scans.iter().map(|s| s.num_pixels()).sum(),
    })
}
