//! Per-round collaborator selection.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};

/// Simulated round times per collaborator, in the order they were recorded.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimeHistory {
    records: BTreeMap<String, Vec<(usize, f64)>>,
}

impl TimeHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, collaborator: &str, round: usize, seconds: f64) -> Result<()> {
        if !(seconds > 0.0) || !seconds.is_finite() {
            return Err(FedError::Data(format!(
                "round time for {collaborator} must be positive, got {seconds}"
            )));
        }
        self.records
            .entry(collaborator.to_string())
            .or_default()
            .push((round, seconds));
        Ok(())
    }

    pub fn latest(&self, collaborator: &str) -> Option<f64> {
        self.records
            .get(collaborator)
            .and_then(|r| r.last())
            .map(|&(_, t)| t)
    }

    pub fn records(&self, collaborator: &str) -> &[(usize, f64)] {
        self.records.get(collaborator).map_or(&[], Vec::as_slice)
    }

    /// Latest time, with never-measured collaborators ranked slowest.
    fn rank_time(&self, collaborator: &str) -> f64 {
        self.latest(collaborator).unwrap_or(f64::INFINITY)
    }
}

fn sorted_pool(pool: &[String]) -> Result<Vec<String>> {
    if pool.is_empty() {
        return Err(FedError::Config("collaborator pool is empty".into()));
    }
    let mut ids = pool.to_vec();
    ids.sort();
    ids.dedup();
    Ok(ids)
}

/// Every collaborator, sorted by id.
pub fn select_all(pool: &[String]) -> Result<Vec<String>> {
    sorted_pool(pool)
}

/// `k` distinct collaborators drawn uniformly, returned sorted by id.
pub fn select_random_subset<R: Rng + ?Sized>(pool: &[String], k: usize, rng: &mut R) -> Result<Vec<String>> {
    let ids = sorted_pool(pool)?;
    if k == 0 || k > ids.len() {
        return Err(FedError::Config(format!(
            "random subset size {k} must lie in 1..={}",
            ids.len()
        )));
    }
    let mut picked = sample(rng, ids.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| ids[i].clone()).collect())
}

/// Pivot plus every collaborator whose latest round time is strictly below
/// the pivot's. The whole pool trains in round 0.
pub fn select_faster_than_random<R: Rng + ?Sized>(
    pool: &[String],
    history: &TimeHistory,
    round: usize,
    rng: &mut R,
) -> Result<Vec<String>> {
    let ids = sorted_pool(pool)?;
    if round == 0 {
        return Ok(ids);
    }
    let pivot = rng.random_range(0..ids.len());
    Ok(faster_than(&ids, history, &ids[pivot]))
}

/// Deterministic core of the faster-than-random rule for a given pivot.
pub fn faster_than(ids: &[String], history: &TimeHistory, pivot: &str) -> Vec<String> {
    let bound = history.rank_time(pivot);
    ids.iter()
        .filter(|id| id.as_str() == pivot || history.rank_time(id) < bound)
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SelectorKind {
    All,
    RandomSubset,
    FasterThanRandom,
}

impl SelectorKind {
    pub const ALL: [SelectorKind; 3] = [
        SelectorKind::All,
        SelectorKind::RandomSubset,
        SelectorKind::FasterThanRandom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SelectorKind::All => "all",
            SelectorKind::RandomSubset => "random_subset",
            SelectorKind::FasterThanRandom => "faster_than_random",
        }
    }
}

impl fmt::Display for SelectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectorKind {
    type Err = FedError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            FedError::Config(format!(
                "unknown selector `{s}` (expected one of: {})",
                Self::ALL.map(|k| k.name()).join(", ")
            ))
        })
    }
}

/// Default random-subset size: half the pool, rounded up.
pub fn default_subset_size(pool_len: usize) -> usize {
    pool_len.div_ceil(2)
}
