//! Server-side aggregation strategies.
//!
//! All strategies consume an [`AggregationBatch`] whose updates are sorted by
//! collaborator id on construction, so every sum runs in the same order no
//! matter how the updates arrived.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::metrics::MetricRecord;
use crate::numerics::{axpy, coordinate_median, weighted_sum, ParamVector};

/// One collaborator's contribution to a round.
#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub collaborator_id: String,
    /// Pre-training global minus post-training local parameters.
    pub delta: ParamVector,
    /// Local SGD steps taken.
    pub tau: usize,
    pub n_samples: usize,
    pub train_loss: f64,
    /// Local model scored on the collaborator's own validation scans.
    pub val_metrics: Option<MetricRecord>,
}

/// Updates of one round with their relative sample sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationBatch {
    updates: Vec<Update>,
    weights: Vec<f64>,
    /// Previous round's aggregated-model mean Dice, if any.
    pub prev_global_val: Option<f64>,
}

impl AggregationBatch {
    pub fn new(mut updates: Vec<Update>, prev_global_val: Option<f64>) -> Result<Self> {
        if updates.is_empty() {
            return Err(FedError::Round("no updates to aggregate".into()));
        }
        updates.sort_by(|a, b| a.collaborator_id.cmp(&b.collaborator_id));
        if let Some(w) = updates.windows(2).find(|w| w[0].collaborator_id == w[1].collaborator_id) {
            return Err(FedError::Round(format!(
                "duplicate update from collaborator {}",
                w[0].collaborator_id
            )));
        }
        if let Some(u) = updates.iter().find(|u| u.n_samples == 0) {
            return Err(FedError::Data(format!(
                "collaborator {} reported zero samples",
                u.collaborator_id
            )));
        }
        for u in &updates[1..] {
            updates[0].delta.check_layout(&u.delta)?;
        }
        let total: usize = updates.iter().map(|u| u.n_samples).sum();
        let weights = updates
            .iter()
            .map(|u| u.n_samples as f64 / total as f64)
            .collect();
        Ok(Self {
            updates,
            weights,
            prev_global_val,
        })
    }

    pub fn updates(&self) -> &[Update] {
        &self.updates
    }

    /// Relative sample sizes `p_i = n_i / Σ n_j`, aligned with `updates()`.
    pub fn relative_sizes(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.updates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.updates.is_empty()
    }

    /// `Σ p_i τ_i`.
    pub fn tau_eff(&self) -> f64 {
        self.updates
            .iter()
            .zip(&self.weights)
            .map(|(u, p)| p * u.tau as f64)
            .sum()
    }

    /// `Σ p_i²`, the step size under which the reduced FedNova form matches
    /// the general one when step counts are proportional to sample counts.
    pub fn sum_sq_sizes(&self) -> f64 {
        self.weights.iter().map(|p| p * p).sum()
    }

    fn deltas(&self) -> Vec<&ParamVector> {
        self.updates.iter().map(|u| &u.delta).collect()
    }

    /// `Σ p_i Δ_i`.
    pub fn weighted_delta(&self) -> Result<ParamVector> {
        weighted_sum(&self.deltas(), &self.weights)
    }
}

fn check_global(global: &ParamVector, batch: &AggregationBatch) -> Result<()> {
    global.check_layout(&batch.updates[0].delta)
}

/// Sample-weighted averaging: `x - Σ p_i Δ_i`.
pub fn fedavg(global: &ParamVector, batch: &AggregationBatch) -> Result<ParamVector> {
    check_global(global, batch)?;
    axpy(-1.0, &batch.weighted_delta()?, global)
}

/// Normalized averaging: `x - τ_eff Σ p_i Δ_i / τ_i`.
pub fn fednova(global: &ParamVector, batch: &AggregationBatch) -> Result<ParamVector> {
    check_global(global, batch)?;
    if let Some(u) = batch.updates.iter().find(|u| u.tau == 0) {
        return Err(FedError::Data(format!(
            "collaborator {} reported zero local steps",
            u.collaborator_id
        )));
    }
    let coeffs: Vec<f64> = batch
        .updates
        .iter()
        .zip(&batch.weights)
        .map(|(u, p)| p / u.tau as f64)
        .collect();
    let normalized = weighted_sum(&batch.deltas(), &coeffs)?;
    axpy(-batch.tau_eff(), &normalized, global)
}

/// Uniform sum with a server step size: `x - γ Σ Δ_i`.
pub fn fednova_reduced(global: &ParamVector, deltas: &[&ParamVector], gamma: f64) -> Result<ParamVector> {
    if deltas.is_empty() {
        return Err(FedError::Round("no deltas to aggregate".into()));
    }
    if !(gamma > 0.0) {
        return Err(FedError::Usage(format!("server step size must be positive, got {gamma}")));
    }
    global.check_layout(deltas[0])?;
    let ones = vec![1.0; deltas.len()];
    let sum = weighted_sum(deltas, &ones)?;
    axpy(-gamma, &sum, global)
}

/// Server momentum buffer and its coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    pub velocity: ParamVector,
    pub beta: f64,
    pub gamma: f64,
}

impl MomentumState {
    pub const DEFAULT_BETA: f64 = 0.9;
    pub const DEFAULT_GAMMA: f64 = 1.0;

    /// Zero velocity shaped like `global`.
    pub fn new(global: &ParamVector, beta: f64, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(FedError::Config(format!("momentum beta must lie in [0, 1), got {beta}")));
        }
        if !(gamma > 0.0) {
            return Err(FedError::Config(format!("server step size must be positive, got {gamma}")));
        }
        Ok(Self {
            velocity: ParamVector::zeros(global.layout().clone()),
            beta,
            gamma,
        })
    }
}

/// Averaging with server momentum: `v' = βv + Σ p_i Δ_i`, `x' = x - γv'`.
pub fn fedavgm(
    global: &ParamVector,
    batch: &AggregationBatch,
    state: &MomentumState,
) -> Result<(ParamVector, MomentumState)> {
    check_global(global, batch)?;
    global.check_layout(&state.velocity)?;
    let avg = batch.weighted_delta()?;
    let velocity = axpy(state.beta, &state.velocity, &avg)?;
    let next = axpy(-state.gamma, &velocity, global)?;
    Ok((
        next,
        MomentumState {
            velocity,
            beta: state.beta,
            gamma: state.gamma,
        },
    ))
}

/// Coordinate-wise median of the collaborators' post-training weights
/// `x - Δ_i`.
pub fn median_aggregate(global: &ParamVector, batch: &AggregationBatch) -> Result<ParamVector> {
    check_global(global, batch)?;
    let locals = batch
        .updates
        .iter()
        .map(|u| global.sub(&u.delta))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&ParamVector> = locals.iter().collect();
    coordinate_median(&refs)
}

/// Keeps only collaborators whose local validation mean Dice beats the
/// previous global score. Falls back to the full batch on the first round or
/// when nobody improved; relative sizes are recomputed over survivors.
pub fn improved_nodes_filter(batch: &AggregationBatch) -> AggregationBatch {
    let Some(prev) = batch.prev_global_val else {
        return batch.clone();
    };
    let survivors: Vec<Update> = batch
        .updates
        .iter()
        .filter(|u| u.val_metrics.is_some_and(|m| m.mean_dice > prev))
        .cloned()
        .collect();
    if survivors.is_empty() {
        return batch.clone();
    }
    AggregationBatch::new(survivors, batch.prev_global_val)
        .expect("subset of a valid batch is valid")
}

/// Aggregator selected by the `aggregator.name` config key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AggregatorKind {
    FedAvg,
    FedNova,
    FedNovaReduced,
    FedAvgM,
    Median,
    FedAvgImproved,
    FedAvgMImproved,
}

impl AggregatorKind {
    pub const ALL: [AggregatorKind; 7] = [
        AggregatorKind::FedAvg,
        AggregatorKind::FedNova,
        AggregatorKind::FedNovaReduced,
        AggregatorKind::FedAvgM,
        AggregatorKind::Median,
        AggregatorKind::FedAvgImproved,
        AggregatorKind::FedAvgMImproved,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregatorKind::FedAvg => "fedavg",
            AggregatorKind::FedNova => "fednova",
            AggregatorKind::FedNovaReduced => "fednova_reduced",
            AggregatorKind::FedAvgM => "fedavgm",
            AggregatorKind::Median => "median",
            AggregatorKind::FedAvgImproved => "fedavg+improved_nodes",
            AggregatorKind::FedAvgMImproved => "fedavgm+improved_nodes",
        }
    }

    pub fn uses_momentum(self) -> bool {
        matches!(self, AggregatorKind::FedAvgM | AggregatorKind::FedAvgMImproved)
    }

    pub fn filters_improved(self) -> bool {
        matches!(self, AggregatorKind::FedAvgImproved | AggregatorKind::FedAvgMImproved)
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregatorKind {
    type Err = FedError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                FedError::Config(format!(
                    "unknown aggregator `{s}` (expected one of: {})",
                    Self::ALL.map(|k| k.name()).join(", ")
                ))
            })
    }
}

/// Stateful server: an aggregator kind plus whatever state it carries
/// between rounds.
#[derive(Debug, Clone)]
pub struct Aggregator {
    kind: AggregatorKind,
    momentum: Option<MomentumState>,
    /// Explicit step size for the reduced FedNova form; `None` uses `Σ p_i²`.
    reduced_gamma: Option<f64>,
}

impl Aggregator {
    pub fn new(
        kind: AggregatorKind,
        global: &ParamVector,
        beta: f64,
        gamma: Option<f64>,
    ) -> Result<Self> {
        let momentum = if kind.uses_momentum() {
            Some(MomentumState::new(
                global,
                beta,
                gamma.unwrap_or(MomentumState::DEFAULT_GAMMA),
            )?)
        } else {
            None
        };
        if let Some(g) = gamma {
            if !(g > 0.0) {
                return Err(FedError::Config(format!("aggregator gamma must be positive, got {g}")));
            }
        }
        Ok(Self {
            kind,
            momentum,
            reduced_gamma: if kind == AggregatorKind::FedNovaReduced { gamma } else { None },
        })
    }

    pub fn kind(&self) -> AggregatorKind {
        self.kind
    }

    pub fn momentum(&self) -> Option<&MomentumState> {
        self.momentum.as_ref()
    }

    /// Produces the next global model and advances internal state.
    pub fn aggregate(&mut self, global: &ParamVector, batch: &AggregationBatch) -> Result<ParamVector> {
        let filtered;
        let batch = if self.kind.filters_improved() {
            filtered = improved_nodes_filter(batch);
            &filtered
        } else {
            batch
        };
        match self.kind {
            AggregatorKind::FedAvg | AggregatorKind::FedAvgImproved => fedavg(global, batch),
            AggregatorKind::FedNova => fednova(global, batch),
            AggregatorKind::FedNovaReduced => {
                let gamma = self.reduced_gamma.unwrap_or_else(|| batch.sum_sq_sizes());
                fednova_reduced(global, &batch.deltas(), gamma)
            }
            AggregatorKind::FedAvgM | AggregatorKind::FedAvgMImproved => {
                let state = self.momentum.as_ref().expect("momentum kinds carry state");
                let (next, state) = fedavgm(global, batch, state)?;
                self.momentum = Some(state);
                Ok(next)
            }
            AggregatorKind::Median => median_aggregate(global, batch),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from_slice(v)
    }

    fn update(id: &str, delta: &[f64], tau: usize, n: usize) -> Update {
        Update {
            collaborator_id: id.to_string(),
            delta: pv(delta),
            tau,
            n_samples: n,
            train_loss: 0.0,
            val_metrics: None,
        }
    }

    fn with_score(mut u: Update, score: f64) -> Update {
        u.val_metrics = Some(MetricRecord {
            mean_dice: score,
            ..MetricRecord::default()
        });
        u
    }

    fn two_party(tau: (usize, usize)) -> AggregationBatch {
        AggregationBatch::new(
            vec![update("a", &[4.0, 0.0], tau.0, 1), update("b", &[0.0, 4.0], tau.1, 3)],
            None,
        )
        .unwrap()
    }

    #[test]
    fn fedavg_examples() {
        let g = pv(&[0.0, 0.0]);
        assert_eq!(fedavg(&g, &two_party((1, 1))).unwrap().values(), &[-1.0, -3.0]);
        let single = AggregationBatch::new(vec![update("a", &[1.5, -2.0], 3, 7)], None).unwrap();
        assert_eq!(fedavg(&pv(&[1.0, 1.0]), &single).unwrap().values(), &[-0.5, 3.0]);
        let zeros = AggregationBatch::new(
            vec![update("a", &[0.0, 0.0], 1, 1), update("b", &[0.0, 0.0], 1, 5)],
            None,
        )
        .unwrap();
        assert_eq!(fedavg(&pv(&[2.0, 3.0]), &zeros).unwrap().values(), &[2.0, 3.0]);
    }

    #[test]
    fn empty_batch_is_round_error() {
        assert!(matches!(AggregationBatch::new(vec![], None), Err(FedError::Round(_))));
        assert!(fednova_reduced(&pv(&[0.0]), &[], 1.0).is_err());
    }

    #[test]
    fn fednova_examples() {
        let g = pv(&[0.0, 0.0]);
        let batch = two_party((1, 3));
        assert_eq!(batch.tau_eff(), 2.5);
        assert_eq!(fednova(&g, &batch).unwrap().values(), &[-2.5, -2.5]);

        let equal = AggregationBatch::new(
            vec![update("a", &[4.0, 1.0], 5, 2), update("b", &[-1.0, 2.0], 5, 2)],
            None,
        )
        .unwrap();
        let a = fednova(&g, &equal).unwrap();
        let b = fedavg(&g, &equal).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }

        let single = AggregationBatch::new(vec![update("a", &[1.0, 2.0], 7, 3)], None).unwrap();
        assert_eq!(fednova(&pv(&[1.0, 1.0]), &single).unwrap().values(), &[0.0, -1.0]);

        let zero_tau = AggregationBatch::new(vec![update("a", &[1.0, 2.0], 0, 3)], None).unwrap();
        assert!(matches!(fednova(&pv(&[1.0, 1.0]), &zero_tau), Err(FedError::Data(_))));
    }

    #[test]
    fn fednova_reduced_examples() {
        let batch = two_party((1, 3));
        assert_eq!(batch.sum_sq_sizes(), 0.625);
        let g = pv(&[0.0, 0.0]);
        let reduced = fednova_reduced(&g, &batch.deltas(), 0.625).unwrap();
        assert_eq!(reduced.values(), &[-2.5, -2.5]);
        assert_eq!(reduced, fednova(&g, &batch).unwrap());
        let d = pv(&[3.0, -1.0]);
        assert_eq!(fednova_reduced(&pv(&[1.0, 1.0]), &[&d], 1.0).unwrap().values(), &[-2.0, 2.0]);
        assert!(fednova_reduced(&g, &[&d], 0.0).is_err());
    }

    #[test]
    fn fedavgm_examples() {
        let g = pv(&[0.5, -0.5]);
        let batch = two_party((1, 1));
        let state = MomentumState::new(&g, 0.0, 1.0).unwrap();
        let (m, _) = fedavgm(&g, &batch, &state).unwrap();
        assert_eq!(m, fedavg(&g, &batch).unwrap());

        let state = MomentumState::new(&g, 0.9, 1.0).unwrap();
        let (first, state) = fedavgm(&g, &batch, &state).unwrap();
        assert_eq!(first, fedavg(&g, &batch).unwrap());
        let (second, _) = fedavgm(&first, &batch, &state).unwrap();
        let avg = batch.weighted_delta().unwrap();
        for i in 0..2 {
            let step = first.values()[i] - second.values()[i];
            assert!((step - 1.9 * avg.values()[i]).abs() < 1e-12);
        }

        let wrong = MomentumState::new(&pv(&[0.0; 3]), 0.9, 1.0).unwrap();
        assert!(matches!(fedavgm(&g, &batch, &wrong), Err(FedError::Layout(_))));
        assert!(MomentumState::new(&g, 1.0, 1.0).is_err());
    }

    #[test]
    fn median_examples() {
        let g = pv(&[1.0, 1.0]);
        let same = AggregationBatch::new(
            vec![update("a", &[0.5, 0.25], 1, 1), update("b", &[0.5, 0.25], 1, 9)],
            None,
        )
        .unwrap();
        assert_eq!(median_aggregate(&g, &same).unwrap().values(), &[0.5, 0.75]);

        let outlier = AggregationBatch::new(
            vec![
                update("a", &[0.1, 0.2], 1, 1),
                update("b", &[0.1, 0.2], 1, 1),
                update("c", &[1e9, 0.2], 1, 100),
            ],
            None,
        )
        .unwrap();
        let m = median_aggregate(&g, &outlier).unwrap();
        assert!((m.values()[0] - 0.9).abs() < 1e-12);
        assert!((m.values()[1] - 0.8).abs() < 1e-12);

        let single = AggregationBatch::new(vec![update("a", &[0.25, -1.0], 1, 1)], None).unwrap();
        assert_eq!(median_aggregate(&g, &single).unwrap().values(), &[0.75, 2.0]);
    }

    #[test]
    fn improved_nodes_examples() {
        let batch = AggregationBatch::new(
            vec![
                with_score(update("c1", &[1.0], 1, 2), 0.6),
                with_score(update("c2", &[1.0], 1, 5), 0.4),
                with_score(update("c3", &[1.0], 1, 6), 0.55),
            ],
            Some(0.5),
        )
        .unwrap();
        let kept = improved_nodes_filter(&batch);
        let ids: Vec<&str> = kept.updates().iter().map(|u| u.collaborator_id.as_str()).collect();
        assert_eq!(ids, ["c1", "c3"]);
        assert_eq!(kept.relative_sizes(), &[2.0 / 8.0, 6.0 / 8.0]);

        let mut none = batch.clone();
        none.prev_global_val = Some(0.9);
        assert_eq!(improved_nodes_filter(&none), none);

        let mut first = batch.clone();
        first.prev_global_val = None;
        assert_eq!(improved_nodes_filter(&first), first);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in AggregatorKind::ALL {
            assert_eq!(k.name().parse::<AggregatorKind>().unwrap(), k);
        }
        let err = "fedprox".parse::<AggregatorKind>().unwrap_err();
        assert!(err.to_string().contains("fedprox"));
    }

    #[test]
    fn stateful_fedavgm_tracks_velocity() {
        let g = pv(&[0.0, 0.0]);
        let mut agg = Aggregator::new(AggregatorKind::FedAvgM, &g, 0.9, None).unwrap();
        let batch = two_party((1, 1));
        let x1 = agg.aggregate(&g, &batch).unwrap();
        let x2 = agg.aggregate(&x1, &batch).unwrap();
        assert_eq!(x1.values(), &[-1.0, -3.0]);
        assert!((x2.values()[0] - (-1.0 - 1.9)).abs() < 1e-12);
        assert!((x2.values()[1] - (-3.0 - 5.7)).abs() < 1e-12);
    }

    fn batch_strategy() -> impl Strategy<Value = Vec<(Vec<f64>, usize, usize)>> {
        prop::collection::vec(
            (prop::collection::vec(-5.0..5.0f64, 3), 1usize..20, 1usize..50),
            1..6,
        )
    }

    fn build(rows: &[(Vec<f64>, usize, usize)]) -> Vec<Update> {
        rows.iter()
            .enumerate()
            .map(|(i, (d, tau, n))| update(&format!("c{i:02}"), d, *tau, *n))
            .collect()
    }

    proptest! {
        #[test]
        fn aggregators_ignore_update_order(rows in batch_strategy(), g in prop::collection::vec(-1.0..1.0f64, 3)) {
            let g = pv(&g);
            let ups = build(&rows);
            let mut rev = ups.clone();
            rev.reverse();
            let a = AggregationBatch::new(ups, None).unwrap();
            let b = AggregationBatch::new(rev, None).unwrap();
            prop_assert_eq!(fedavg(&g, &a).unwrap(), fedavg(&g, &b).unwrap());
            prop_assert_eq!(fednova(&g, &a).unwrap(), fednova(&g, &b).unwrap());
            prop_assert_eq!(median_aggregate(&g, &a).unwrap(), median_aggregate(&g, &b).unwrap());
        }

        #[test]
        fn fedavg_stays_in_convex_hull(rows in batch_strategy(), g in prop::collection::vec(-1.0..1.0f64, 3)) {
            let g = pv(&g);
            let batch = AggregationBatch::new(build(&rows), None).unwrap();
            let out = fedavg(&g, &batch).unwrap();
            for i in 0..3 {
                let locals = batch.updates().iter().map(|u| g.values()[i] - u.delta.values()[i]);
                let (lo, hi) = locals.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
                prop_assert!(out.values()[i] >= lo - 1e-12 && out.values()[i] <= hi + 1e-12);
            }
        }

        #[test]
        fn improved_filter_weights_normalized(
            rows in batch_strategy(),
            scores in prop::collection::vec(0.0..1.0f64, 6),
            prev in 0.0..1.0f64,
        ) {
            let ups: Vec<Update> = build(&rows)
                .into_iter()
                .zip(&scores)
                .map(|(u, &s)| with_score(u, s))
                .collect();
            let batch = AggregationBatch::new(ups, Some(prev)).unwrap();
            let kept = improved_nodes_filter(&batch);
            let total: f64 = kept.relative_sizes().iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }
    }
}
