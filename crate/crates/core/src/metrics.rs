//! Segmentation metrics on the composite ET/TC/WT regions: Dice,
//! sensitivity, specificity and the 95th-percentile Hausdorff distance, plus
//! the summary statistics used in result tables.
//!
//! Conventions for degenerate masks:
//! * both masks empty: Dice, sensitivity and specificity are 1.0 and the
//!   Hausdorff distance is 0.0;
//! * exactly one mask empty: the Hausdorff distance is the grid diagonal.

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};

/// Binary mask on a `rows x cols` grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(FedError::Usage(format!(
                "mask of {} pixels does not fit a {rows}x{cols} grid",
                bits.len()
            )));
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Self { rows, cols, bits }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.cols + c]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    fn diagonal(&self) -> f64 {
        ((self.rows * self.rows + self.cols * self.cols) as f64).sqrt()
    }
}

/// Composite masks: enhancing tumour, tumour core and whole tumour.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskTriple {
    pub et: Mask,
    pub tc: Mask,
    pub wt: Mask,
}

/// Builds ET (label 3), TC (labels 2, 3) and WT (labels 1, 2, 3) masks from a
/// square label grid.
pub fn composite_masks(labels: &[u8], grid_size: usize) -> Result<MaskTriple> {
    if labels.len() != grid_size * grid_size {
        return Err(FedError::Usage(format!(
            "label grid of {} pixels is not {grid_size}x{grid_size}",
            labels.len()
        )));
    }
    if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l > 3) {
        return Err(FedError::Data(format!("label {l} at pixel {i} is outside 0..=3")));
    }
    let mask = |pred: fn(u8) -> bool| Mask {
        rows: grid_size,
        cols: grid_size,
        bits: labels.iter().map(|&l| pred(l)).collect(),
    };
    Ok(MaskTriple {
        et: mask(|l| l == 3),
        tc: mask(|l| l == 2 || l == 3),
        wt: mask(|l| l != 0),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Confusion {
    tp: usize,
    fp: usize,
    fn_: usize,
    tn: usize,
}

fn confusion(pred: &Mask, truth: &Mask) -> Result<Confusion> {
    if pred.rows != truth.rows || pred.cols != truth.cols {
        return Err(FedError::Usage(format!(
            "mask shapes differ: {}x{} vs {}x{}",
            pred.rows, pred.cols, truth.rows, truth.cols
        )));
    }
    let mut c = Confusion::default();
    for (&p, &t) in pred.bits.iter().zip(&truth.bits) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn ratio_or_one(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// `2TP / (2TP + FP + FN)`.
pub fn dice(pred: &Mask, truth: &Mask) -> Result<f64> {
    let c = confusion(pred, truth)?;
    Ok(ratio_or_one(2 * c.tp, 2 * c.tp + c.fp + c.fn_))
}

/// `TP / (TP + FN)`.
pub fn sensitivity(pred: &Mask, truth: &Mask) -> Result<f64> {
    let c = confusion(pred, truth)?;
    Ok(ratio_or_one(c.tp, c.tp + c.fn_))
}

/// `TN / (TN + FP)`.
pub fn specificity(pred: &Mask, truth: &Mask) -> Result<f64> {
    let c = confusion(pred, truth)?;
    Ok(ratio_or_one(c.tn, c.tn + c.fp))
}

/// Symmetric 95th-percentile Hausdorff distance over full pixel sets.
///
/// For each direction, every pixel of the source set is assigned the
/// Euclidean distance to the nearest pixel of the target set; the
/// nearest-rank 95th percentile of those distances is taken, and the result is
/// the larger of the two directions.
pub fn hausdorff95(pred: &Mask, truth: &Mask) -> Result<f64> {
    confusion(pred, truth)?;
    match (pred.count(), truth.count()) {
        (0, 0) => Ok(0.0),
        (0, _) | (_, 0) => Ok(pred.diagonal()),
        _ => {
            let to_truth = directed_percentile(pred, &squared_distance_transform(truth), 0.95);
            let to_pred = directed_percentile(truth, &squared_distance_transform(pred), 0.95);
            Ok(to_truth.max(to_pred))
        }
    }
}

/// Nearest-rank percentile of `sqrt(dist2)` over the pixels set in `source`.
fn directed_percentile(source: &Mask, dist2: &[f64], q: f64) -> f64 {
    let mut d: Vec<f64> = source
        .bits
        .iter()
        .zip(dist2)
        .filter(|(&b, _)| b)
        .map(|(_, &d2)| d2)
        .collect();
    d.sort_by(f64::total_cmp);
    nearest_rank(&d, q).sqrt()
}

/// Nearest-rank percentile of sorted, non-empty `sorted`: the value at
/// 1-based rank `ceil(q * n)`.
pub(crate) fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Exact squared Euclidean distance from every pixel to the nearest set pixel
/// of `mask` (two-pass lower-envelope transform). Pixels of an empty mask get
/// infinity.
fn squared_distance_transform(mask: &Mask) -> Vec<f64> {
    let (rows, cols) = (mask.rows, mask.cols);
    let mut grid: Vec<f64> = mask
        .bits
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    let n = rows.max(cols);
    let mut buf = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];

    for c in 0..cols {
        for r in 0..rows {
            buf[r] = grid[r * cols + c];
        }
        envelope_1d(&buf[..rows], &mut out[..rows], &mut v, &mut z);
        for r in 0..rows {
            grid[r * cols + c] = out[r];
        }
    }
    for r in 0..rows {
        buf[..cols].copy_from_slice(&grid[r * cols..(r + 1) * cols]);
        envelope_1d(&buf[..cols], &mut out[..cols], &mut v, &mut z);
        grid[r * cols..(r + 1) * cols].copy_from_slice(&out[..cols]);
    }
    grid
}

/// One-dimensional squared distance transform of the sampled function `f`.
fn envelope_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    // Skip leading positions where f is infinite; parabolas rooted there never
    // contribute.
    let Some(first) = f.iter().position(|x| x.is_finite()) else {
        d.iter_mut().for_each(|x| *x = f64::INFINITY);
        return;
    };
    let mut k = 0;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        let qf = q as f64;
        let mut s;
        loop {
            let p = v[k] as f64;
            s = ((f[q] + qf * qf) - (f[v[k]] + p * p)) / (2.0 * qf - 2.0 * p);
            // z[0] is -inf, so this stops at k = 0 at the latest.
            if s > z[k] {
                break;
            }
            k -= 1;
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let p = v[k] as f64;
        *out = (qf - p) * (qf - p) + f[v[k]];
    }
}

/// Per-scan (or pooled) metric values for the three composite regions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub dice_et: f64,
    pub dice_tc: f64,
    pub dice_wt: f64,
    pub sens_et: f64,
    pub sens_tc: f64,
    pub sens_wt: f64,
    pub spec_et: f64,
    pub spec_tc: f64,
    pub spec_wt: f64,
    pub hd95_et: f64,
    pub hd95_tc: f64,
    pub hd95_wt: f64,
    pub mean_dice: f64,
}

/// Column names of a metric record, in the order used by every table.
pub const METRIC_NAMES: [&str; 12] = [
    "dice_et", "dice_tc", "dice_wt", "sens_et", "sens_tc", "sens_wt", "spec_et", "spec_tc",
    "spec_wt", "hd95_et", "hd95_tc", "hd95_wt",
];

impl MetricRecord {
    pub fn evaluate(pred: &MaskTriple, truth: &MaskTriple) -> Result<Self> {
        let pairs = [(&pred.et, &truth.et), (&pred.tc, &truth.tc), (&pred.wt, &truth.wt)];
        let mut d = [0.0; 3];
        let mut se = [0.0; 3];
        let mut sp = [0.0; 3];
        let mut hd = [0.0; 3];
        for (i, (p, t)) in pairs.into_iter().enumerate() {
            d[i] = dice(p, t)?;
            se[i] = sensitivity(p, t)?;
            sp[i] = specificity(p, t)?;
            hd[i] = hausdorff95(p, t)?;
        }
        Ok(Self::from_values([
            d[0], d[1], d[2], se[0], se[1], se[2], sp[0], sp[1], sp[2], hd[0], hd[1], hd[2],
        ]))
    }

    /// Record from the twelve metric values in [`METRIC_NAMES`] order; the
    /// mean Dice is derived.
    pub fn from_values(v: [f64; 12]) -> Self {
        let mut r = Self {
            dice_et: v[0],
            dice_tc: v[1],
            dice_wt: v[2],
            sens_et: v[3],
            sens_tc: v[4],
            sens_wt: v[5],
            spec_et: v[6],
            spec_tc: v[7],
            spec_wt: v[8],
            hd95_et: v[9],
            hd95_tc: v[10],
            hd95_wt: v[11],
            mean_dice: 0.0,
        };
        r.mean_dice = mean_dice(&r);
        r
    }

    pub fn values(&self) -> [f64; 12] {
        [
            self.dice_et,
            self.dice_tc,
            self.dice_wt,
            self.sens_et,
            self.sens_tc,
            self.sens_wt,
            self.spec_et,
            self.spec_tc,
            self.spec_wt,
            self.hd95_et,
            self.hd95_tc,
            self.hd95_wt,
        ]
    }

    /// Weighted mean of records, metric by metric. Weights need not be
    /// normalized.
    pub fn weighted_mean(records: &[(MetricRecord, f64)]) -> Result<Self> {
        let total: f64 = records.iter().map(|(_, w)| w).sum();
        if records.is_empty() || !(total > 0.0) {
            return Err(FedError::Usage("weighted mean of no records".into()));
        }
        let mut acc = [0.0; 12];
        for (rec, w) in records {
            for (a, v) in acc.iter_mut().zip(rec.values()) {
                *a += w * v;
            }
        }
        Ok(Self::from_values(acc.map(|a| a / total)))
    }
}

/// Mean of the three Dice values.
pub fn mean_dice(record: &MetricRecord) -> f64 {
    (record.dice_et + record.dice_tc + record.dice_wt) / 3.0
}

/// Mean, population standard deviation and quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub std: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

/// Quartiles use linear interpolation between order statistics: the
/// q-quantile of sorted `x[0..n]` sits at fractional index `q * (n - 1)`.
pub fn summary_stats(values: &[f64]) -> Result<SummaryStats> {
    if values.is_empty() {
        return Err(FedError::Usage("summary statistics of an empty list".into()));
    }
    let n = values.len() as f64;
    // Shifted by the first value so constant inputs give an exact mean.
    let origin = values[0];
    let mean = origin + values.iter().map(|v| v - origin).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(SummaryStats {
        mean,
        std: var.sqrt(),
        q1: interpolated_quantile(&sorted, 0.25),
        q2: interpolated_quantile(&sorted, 0.5),
        q3: interpolated_quantile(&sorted, 0.75),
    })
}

fn interpolated_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(rows: usize, cols: usize, on: &[(usize, usize)]) -> Mask {
        Mask::from_fn(rows, cols, |r, c| on.contains(&(r, c)))
    }

    #[test]
    fn composite_examples() {
        let t = composite_masks(&[0; 16], 4).unwrap();
        assert_eq!((t.et.count(), t.tc.count(), t.wt.count()), (0, 0, 0));

        let mut labels = vec![0u8; 16];
        labels[5] = 3;
        let t = composite_masks(&labels, 4).unwrap();
        for m in [&t.et, &t.tc, &t.wt] {
            assert_eq!(m.count(), 1);
            assert!(m.bits()[5]);
        }

        let mut labels = vec![0u8; 16];
        labels[2] = 1;
        labels[9] = 2;
        let t = composite_masks(&labels, 4).unwrap();
        let on = |m: &Mask| m.bits().iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect::<Vec<_>>();
        assert_eq!(on(&t.wt), vec![2, 9]);
        assert_eq!(on(&t.tc), vec![9]);
        assert!(on(&t.et).is_empty());

        labels[0] = 4;
        assert!(matches!(composite_masks(&labels, 4), Err(FedError::Data(_))));
    }

    #[test]
    fn dice_examples() {
        let a = mask_from(4, 4, &[(0, 0), (1, 1)]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = mask_from(4, 4, &[(3, 3)]);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        let truth = mask_from(4, 4, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        let pred = mask_from(4, 4, &[(0, 0), (0, 1)]);
        assert!((dice(&pred, &truth).unwrap() - 4.0 / 6.0).abs() < 1e-15);
        assert!((dice(&pred, &truth).unwrap() - 0.6667).abs() < 1e-4);
        assert_eq!(dice(&Mask::empty(3, 3), &Mask::empty(3, 3)).unwrap(), 1.0);
        assert!(matches!(dice(&Mask::empty(3, 3), &Mask::empty(3, 4)), Err(FedError::Usage(_))));
    }

    #[test]
    fn sensitivity_specificity_examples() {
        let truth = mask_from(10, 10, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert_eq!(sensitivity(&truth, &truth).unwrap(), 1.0);
        assert_eq!(specificity(&truth, &truth).unwrap(), 1.0);
        let all = Mask::from_fn(10, 10, |_, _| true);
        assert_eq!(sensitivity(&all, &truth).unwrap(), 1.0);
        assert_eq!(specificity(&all, &truth).unwrap(), 0.0);
        let pred = mask_from(10, 10, &[(0, 0), (0, 1), (1, 0), (5, 5), (6, 6)]);
        assert_eq!(sensitivity(&pred, &truth).unwrap(), 0.75);
        assert_eq!(specificity(&pred, &truth).unwrap(), 94.0 / 96.0);
        assert!((specificity(&pred, &truth).unwrap() - 0.9792).abs() < 1e-4);
    }

    #[test]
    fn hausdorff_examples() {
        let a = mask_from(8, 8, &[(1, 1), (2, 2), (2, 3)]);
        assert_eq!(hausdorff95(&a, &a).unwrap(), 0.0);
        let p = mask_from(8, 8, &[(0, 0)]);
        let q = mask_from(8, 8, &[(3, 4)]);
        assert_eq!(hausdorff95(&p, &q).unwrap(), 5.0);
        let diag = (128.0f64).sqrt();
        assert_eq!(hausdorff95(&p, &Mask::empty(8, 8)).unwrap(), diag);
        assert_eq!(hausdorff95(&Mask::empty(8, 8), &q).unwrap(), diag);
        assert_eq!(hausdorff95(&Mask::empty(8, 8), &Mask::empty(8, 8)).unwrap(), 0.0);
    }

    #[test]
    fn hausdorff_uses_nearest_rank() {
        // 20 source pixels on a row, target at one end: directed distances
        // 0..19, nearest rank ceil(0.95 * 20) = 19 -> distance 18.
        let src = Mask::from_fn(1, 20, |_, _| true);
        let dst = mask_from(1, 20, &[(0, 0)]);
        assert_eq!(hausdorff95(&dst, &src).unwrap(), 18.0);
    }

    #[test]
    fn distance_transform_on_rectangular_grid() {
        let m = mask_from(3, 7, &[(0, 6)]);
        let d = squared_distance_transform(&m);
        assert_eq!(d[2 * 7], 4.0 + 36.0);
        assert_eq!(d[6], 0.0);
        assert!(squared_distance_transform(&Mask::empty(2, 2)).iter().all(|x| x.is_infinite()));
    }

    #[test]
    fn mean_dice_examples() {
        let rec = |d: [f64; 3]| MetricRecord::from_values([d[0], d[1], d[2], 0., 0., 0., 0., 0., 0., 0., 0., 0.]);
        assert_eq!(mean_dice(&rec([1.0, 1.0, 1.0])), 1.0);
        assert!((mean_dice(&rec([0.6, 0.8, 1.0])) - 0.8).abs() < 1e-15);
        assert_eq!(mean_dice(&rec([0.0, 0.0, 0.0])), 0.0);
        let r = rec([0.6, 0.8, 1.0]);
        assert_eq!(r.mean_dice, mean_dice(&r));
    }

    #[test]
    fn summary_examples() {
        let s = summary_stats(&[5.0]).unwrap();
        assert_eq!((s.mean, s.std, s.q1, s.q2, s.q3), (5.0, 0.0, 5.0, 5.0, 5.0));
        let s = summary_stats(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(s.mean, 3.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!((s.q1, s.q2, s.q3), (2.0, 3.0, 4.0));
        let s = summary_stats(&[0.7; 6]).unwrap();
        assert_eq!(s.std, 0.0);
        assert!(s.q1 == s.q2 && s.q2 == s.q3);
        assert!(summary_stats(&[]).is_err());
        // Interpolated case: [1,2,3,4] -> Q1 at index 0.75.
        assert_eq!(summary_stats(&[4.0, 1.0, 3.0, 2.0]).unwrap().q1, 1.75);
    }

    #[test]
    fn weighted_mean_recomputes_mean_dice() {
        let a = MetricRecord::from_values([1.0; 12]);
        let b = MetricRecord::from_values([0.0; 12]);
        let m = MetricRecord::weighted_mean(&[(a, 3.0), (b, 1.0)]).unwrap();
        assert_eq!(m.dice_et, 0.75);
        assert_eq!(m.mean_dice, mean_dice(&m));
    }
}
