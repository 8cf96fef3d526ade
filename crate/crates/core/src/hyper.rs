//! Round-level hyperparameter policies: fixed values, learning-rate decay on
//! a metric plateau, loss-driven decay of local epochs, and the combination
//! of the last two.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};

pub const CONSTANT_LR: f64 = 0.00005;
pub const CONSTANT_EPOCHS: usize = 1;
pub const PLATEAU_LR: f64 = 0.0002;
pub const PLATEAU_PATIENCE: usize = 15;
pub const PLATEAU_DECAY: f64 = 0.5;
pub const ADAPTIVE_E0: usize = 8;

/// Learning rate and local epoch count for one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperDecision {
    pub lr: f64,
    pub epochs: usize,
}

pub fn constant_policy() -> HyperDecision {
    HyperDecision {
        lr: CONSTANT_LR,
        epochs: CONSTANT_EPOCHS,
    }
}

/// Decay-on-plateau bookkeeping. Improvement is strict; the counter resets on
/// every improvement and after every decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauState {
    pub best_metric: f64,
    pub rounds_since_improvement: usize,
    pub current_lr: f64,
    pub patience: usize,
    pub decay_factor: f64,
}

impl PlateauState {
    pub fn new(lr: f64, patience: usize, decay_factor: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(FedError::Config(format!("initial learning rate must be positive, got {lr}")));
        }
        if patience == 0 {
            return Err(FedError::Config("patience must be at least 1".into()));
        }
        if !(decay_factor > 0.0 && decay_factor < 1.0) {
            return Err(FedError::Config(format!(
                "decay factor must lie in (0, 1), got {decay_factor}"
            )));
        }
        Ok(Self {
            best_metric: f64::NEG_INFINITY,
            rounds_since_improvement: 0,
            current_lr: lr,
            patience,
            decay_factor,
        })
    }

    pub fn standard() -> Self {
        Self::new(PLATEAU_LR, PLATEAU_PATIENCE, PLATEAU_DECAY).expect("valid defaults")
    }
}

/// Feeds one round's tracked metric; returns the new state and the learning
/// rate for the next round.
pub fn plateau_step(state: PlateauState, metric: f64) -> (PlateauState, f64) {
    let mut next = state;
    if metric > state.best_metric {
        next.best_metric = metric;
        next.rounds_since_improvement = 0;
    } else {
        next.rounds_since_improvement += 1;
        if next.rounds_since_improvement >= next.patience {
            next.current_lr *= next.decay_factor;
            next.rounds_since_improvement = 0;
        }
    }
    (next, next.current_lr)
}

/// `ceil(sqrt(Ft / F0) * E0)` clamped to `[1, E0]`.
pub fn adaptive_epoch(f0: f64, ft: f64, e0: usize) -> Result<usize> {
    if !(f0 > 0.0) || !f0.is_finite() {
        return Err(FedError::State(format!("initial loss must be positive, got {f0}")));
    }
    if !(ft >= 0.0) {
        return Err(FedError::State(format!("round loss must be non-negative, got {ft}")));
    }
    if e0 == 0 {
        return Err(FedError::State("initial epoch count must be at least 1".into()));
    }
    let raw = ((ft / f0).sqrt() * e0 as f64).ceil();
    Ok(if raw.is_nan() || raw >= e0 as f64 {
        e0
    } else {
        (raw as usize).max(1)
    })
}

/// Plateau-driven learning rate composed with loss-driven epochs.
pub fn combined_policy(
    plateau: PlateauState,
    f0: f64,
    ft: f64,
    e0: usize,
    current_mean_dice: f64,
) -> Result<(HyperDecision, PlateauState)> {
    let epochs = adaptive_epoch(f0, ft, e0)?;
    let (state, lr) = plateau_step(plateau, current_mean_dice);
    Ok((HyperDecision { lr, epochs }, state))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HyperKind {
    Constant,
    LrPlateau,
    AdaptiveEpoch,
    AdaptiveEpochLrPlateau,
}

impl HyperKind {
    pub const ALL: [HyperKind; 4] = [
        HyperKind::Constant,
        HyperKind::LrPlateau,
        HyperKind::AdaptiveEpoch,
        HyperKind::AdaptiveEpochLrPlateau,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HyperKind::Constant => "constant",
            HyperKind::LrPlateau => "lr_plateau",
            HyperKind::AdaptiveEpoch => "adaptive_epoch",
            HyperKind::AdaptiveEpochLrPlateau => "adaptive_epoch+lr_plateau",
        }
    }

    fn schedules_lr(self) -> bool {
        matches!(self, HyperKind::LrPlateau | HyperKind::AdaptiveEpochLrPlateau)
    }

    fn adapts_epochs(self) -> bool {
        matches!(self, HyperKind::AdaptiveEpoch | HyperKind::AdaptiveEpochLrPlateau)
    }

    /// Initial learning rate when the config does not set one.
    pub fn default_lr(self) -> f64 {
        if self.schedules_lr() {
            PLATEAU_LR
        } else {
            CONSTANT_LR
        }
    }
}

impl fmt::Display for HyperKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HyperKind {
    type Err = FedError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            FedError::Config(format!(
                "unknown hyper policy `{s}` (expected one of: {})",
                Self::ALL.map(|k| k.name()).join(", ")
            ))
        })
    }
}

/// Resolved policy parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub kind: HyperKind,
    pub lr0: f64,
    /// Epochs per round for policies that do not adapt them.
    pub epochs: usize,
    pub e0: usize,
    pub patience: usize,
    pub decay_factor: f64,
}

impl HyperParams {
    pub fn defaults(kind: HyperKind) -> Self {
        Self {
            kind,
            lr0: kind.default_lr(),
            epochs: CONSTANT_EPOCHS,
            e0: ADAPTIVE_E0,
            patience: PLATEAU_PATIENCE,
            decay_factor: PLATEAU_DECAY,
        }
    }
}

/// Engine-owned policy state. Call [`HyperScheduler::decision`] before a
/// round and [`HyperScheduler::observe`] after it.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperScheduler {
    params: HyperParams,
    plateau: Option<PlateauState>,
    initial_loss: Option<f64>,
    last_loss: Option<f64>,
    lr: f64,
}

impl HyperScheduler {
    pub fn new(params: HyperParams) -> Result<Self> {
        if !(params.lr0 > 0.0) || !params.lr0.is_finite() {
            return Err(FedError::Config(format!("lr0 must be positive, got {}", params.lr0)));
        }
        if params.epochs == 0 || params.e0 == 0 {
            return Err(FedError::Config("epoch counts must be at least 1".into()));
        }
        let plateau = if params.kind.schedules_lr() {
            Some(PlateauState::new(params.lr0, params.patience, params.decay_factor)?)
        } else {
            None
        };
        Ok(Self {
            params,
            plateau,
            initial_loss: None,
            last_loss: None,
            lr: params.lr0,
        })
    }

    pub fn params(&self) -> &HyperParams {
        &self.params
    }

    pub fn plateau(&self) -> Option<&PlateauState> {
        self.plateau.as_ref()
    }

    /// Hyperparameters for the next round.
    pub fn decision(&self) -> Result<HyperDecision> {
        let epochs = if self.params.kind.adapts_epochs() {
            match (self.initial_loss, self.last_loss) {
                (Some(f0), Some(ft)) => adaptive_epoch(f0, ft, self.params.e0)?,
                _ => self.params.e0,
            }
        } else {
            self.params.epochs
        };
        Ok(HyperDecision { lr: self.lr, epochs })
    }

    /// Records a finished round: the aggregate training loss (first value
    /// becomes the baseline loss) and the aggregated model's mean Dice.
    pub fn observe(&mut self, round_loss: f64, mean_dice: f64) -> Result<()> {
        if self.params.kind.adapts_epochs() {
            if self.initial_loss.is_none() {
                if !(round_loss > 0.0) || !round_loss.is_finite() {
                    return Err(FedError::State(format!(
                        "baseline loss must be positive and finite, got {round_loss}"
                    )));
                }
                self.initial_loss = Some(round_loss);
            }
            self.last_loss = Some(round_loss);
        }
        if let Some(state) = self.plateau {
            let (next, lr) = plateau_step(state, mean_dice);
            self.plateau = Some(next);
            self.lr = lr;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_defaults() {
        assert_eq!(constant_policy(), HyperDecision { lr: 0.00005, epochs: 1 });
        let mut s = HyperScheduler::new(HyperParams::defaults(HyperKind::Constant)).unwrap();
        for round in 0..70 {
            assert_eq!(s.decision().unwrap(), constant_policy(), "round {round}");
            s.observe(1.0 / (round + 1) as f64, round as f64 * 0.01).unwrap();
        }
    }

    #[test]
    fn plateau_decays_after_patience() {
        let mut state = PlateauState::new(0.0002, 15, 0.5).unwrap();
        let (s, lr) = plateau_step(state, 0.5);
        assert_eq!(lr, 0.0002);
        state = s;
        for i in 0..15 {
            let (s, lr) = plateau_step(state, 0.5);
            state = s;
            if i < 14 {
                assert_eq!(lr, 0.0002);
            } else {
                assert_eq!(lr, 0.0001);
            }
        }
        assert_eq!(state.rounds_since_improvement, 0);
    }

    #[test]
    fn improvement_inside_window_resets() {
        let mut state = PlateauState::new(0.0002, 15, 0.5).unwrap();
        state = plateau_step(state, 0.5).0;
        for _ in 0..13 {
            state = plateau_step(state, 0.4).0;
        }
        let (s, lr) = plateau_step(state, 0.51);
        assert_eq!(lr, 0.0002);
        assert_eq!(s.rounds_since_improvement, 0);
    }

    #[test]
    fn improving_metric_never_decays() {
        let mut state = PlateauState::new(0.0002, 3, 0.5).unwrap();
        for i in 0..200 {
            state = plateau_step(state, i as f64).0;
        }
        assert_eq!(state.current_lr, 0.0002);
    }

    #[test]
    fn k_decays_are_exact_powers() {
        let mut state = PlateauState::new(0.0002, 2, 0.5).unwrap();
        state = plateau_step(state, 1.0).0;
        for _ in 0..10 {
            state = plateau_step(state, 0.0).0;
        }
        assert_eq!(state.current_lr, 0.0002 * 0.5f64.powi(5));
    }

    #[test]
    fn adaptive_epoch_examples() {
        assert_eq!(adaptive_epoch(2.0, 2.0, 8).unwrap(), 8);
        assert_eq!(adaptive_epoch(2.0, 0.5, 8).unwrap(), 4);
        assert_eq!(adaptive_epoch(1.0, 0.3, 8).unwrap(), 5);
        assert_eq!(adaptive_epoch(1.0, 0.0, 8).unwrap(), 1);
        assert_eq!(adaptive_epoch(1.0, 5.0, 8).unwrap(), 8);
        assert!(matches!(adaptive_epoch(0.0, 1.0, 8), Err(FedError::State(_))));
    }

    #[test]
    fn combined_examples() {
        let params = HyperParams::defaults(HyperKind::AdaptiveEpochLrPlateau);
        let s = HyperScheduler::new(params).unwrap();
        assert_eq!(s.decision().unwrap(), HyperDecision { lr: 0.0002, epochs: 8 });

        let mut plateau = PlateauState::standard();
        plateau = plateau_step(plateau, 0.7).0;
        for _ in 0..14 {
            plateau = plateau_step(plateau, 0.7).0;
        }
        let (d, _) = combined_policy(plateau, 2.0, 0.5, 8, 0.7).unwrap();
        assert_eq!(d, HyperDecision { lr: 0.0001, epochs: 4 });

        let mut s = HyperScheduler::new(params).unwrap();
        for round in 0..40 {
            s.observe(1.3, 0.1 + round as f64 * 0.01).unwrap();
            assert_eq!(s.decision().unwrap(), HyperDecision { lr: 0.0002, epochs: 8 });
        }
    }

    #[test]
    fn scheduler_uses_first_loss_as_baseline() {
        let mut s = HyperScheduler::new(HyperParams::defaults(HyperKind::AdaptiveEpoch)).unwrap();
        assert_eq!(s.decision().unwrap().epochs, 8);
        s.observe(2.0, 0.1).unwrap();
        assert_eq!(s.decision().unwrap().epochs, 8);
        s.observe(0.5, 0.2).unwrap();
        assert_eq!(s.decision().unwrap(), HyperDecision { lr: 0.00005, epochs: 4 });
    }

    #[test]
    fn kinds_parse() {
        for k in HyperKind::ALL {
            assert_eq!(k.name().parse::<HyperKind>().unwrap(), k);
        }
        assert!("cosine".parse::<HyperKind>().unwrap_err().to_string().contains("cosine"));
    }

    proptest! {
        #[test]
        fn adaptive_epoch_clamped(f0 in 1e-6..1e3f64, ft in 0.0..1e4f64, e0 in 1usize..32) {
            let e = adaptive_epoch(f0, ft, e0).unwrap();
            prop_assert!((1..=e0).contains(&e));
        }

        #[test]
        fn adaptive_epoch_monotone(f0 in 1e-3..10.0f64, a in 0.0..20.0f64, b in 0.0..20.0f64, e0 in 1usize..16) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(adaptive_epoch(f0, lo, e0).unwrap() <= adaptive_epoch(f0, hi, e0).unwrap());
        }

        #[test]
        fn plateau_never_decays_twice_per_window(trace in prop::collection::vec(0.0..1.0f64, 1..120), patience in 1usize..20) {
            let mut state = PlateauState::new(0.0002, patience, 0.5).unwrap();
            let mut last_decay: Option<usize> = None;
            for (i, &m) in trace.iter().enumerate() {
                let before = state.current_lr;
                state = plateau_step(state, m).0;
                prop_assert!(state.rounds_since_improvement < patience);
                if state.current_lr < before {
                    if let Some(prev) = last_decay {
                        prop_assert!(i - prev >= patience);
                    }
                    last_decay = Some(i);
                }
            }
        }
    }
}
