//! Non-IID collaborator shards: an institution-sized natural split, an
//! optional re-split of the largest institutions by tumour size, and the
//! per-collaborator 80/20 train/validation split.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::rng::{derive_seed, stream, tag};
use crate::synthtask::Scan;

/// Share of the largest institution.
pub const LARGEST_SHARE: f64 = 0.3783;
/// Share of the smallest institution.
pub const SMALLEST_SHARE: f64 = 0.0088;
pub const DEFAULT_INSTITUTIONS: usize = 14;
pub const DEFAULT_BINS: usize = 3;
pub const DEFAULT_LARGEST_K: usize = 5;
/// Every shard needs one training and one validation scan.
pub const MIN_SHARD_SCANS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub proportions: Vec<f64>,
    pub artificial: bool,
    pub artificial_bins: usize,
    pub largest_k: usize,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        Self {
            proportions: default_proportions(),
            artificial: false,
            artificial_bins: DEFAULT_BINS,
            largest_k: DEFAULT_LARGEST_K,
        }
    }
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.proportions.is_empty() {
            return Err(FedError::Config("partition needs at least one proportion".into()));
        }
        if let Some(p) = self.proportions.iter().find(|p| !(**p > 0.0)) {
            return Err(FedError::Config(format!("partition proportion {p} is not positive")));
        }
        let total: f64 = self.proportions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(FedError::Config(format!("partition proportions sum to {total}, not 1")));
        }
        if self.artificial {
            if self.artificial_bins < 2 {
                return Err(FedError::Config(format!(
                    "artificial split needs at least 2 bins, got {}",
                    self.artificial_bins
                )));
            }
            if self.largest_k > self.proportions.len() {
                return Err(FedError::Config(format!(
                    "cannot re-split {} institutions out of {}",
                    self.largest_k,
                    self.proportions.len()
                )));
            }
        }
        Ok(())
    }
}

/// Fourteen institution shares with the largest and smallest pinned at
/// 37.83% and 0.88%. The twelve in between decay geometrically towards the
/// smallest share and absorb the remaining mass exactly; they approximate a
/// heavily skewed institutional split and are not measured values.
pub fn default_proportions() -> Vec<f64> {
    let middle = DEFAULT_INSTITUTIONS - 2;
    let remaining = 1.0 - LARGEST_SHARE - SMALLEST_SHARE;
    // Find growth g > 1 with SMALLEST * (g + g^2 + ... + g^middle) = remaining.
    let mass = |g: f64| (1..=middle).map(|j| SMALLEST_SHARE * g.powi(j as i32)).sum::<f64>();
    let (mut lo, mut hi) = (1.0, 2.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) < remaining {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let g = 0.5 * (lo + hi);
    let mut out = Vec::with_capacity(DEFAULT_INSTITUTIONS);
    out.push(LARGEST_SHARE);
    out.extend((1..=middle).rev().map(|j| SMALLEST_SHARE * g.powi(j as i32)));
    out.push(SMALLEST_SHARE);
    // Put any bisection residue on the largest middle entry.
    let residue = 1.0 - out.iter().sum::<f64>();
    out[1] += residue;
    out
}

/// One collaborator's data.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub collaborator_id: String,
    pub train: Vec<Scan>,
    pub validation: Vec<Scan>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn institution_id(index: usize) -> String {
    format!("inst-{:02}", index + 1)
}

/// Largest-remainder apportionment of `total` items. Ties in the fractional
/// part go to the lower index.
pub fn apportion(proportions: &[f64], total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Raises every size to `min` by taking scans from the currently largest
/// shard (lowest index on ties).
fn enforce_minimum(sizes: &mut [usize], min: usize) {
    while let Some(small) = sizes.iter().position(|&s| s < min) {
        let donor = (0..sizes.len())
            .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
            .expect("non-empty");
        sizes[donor] -= 1;
        sizes[small] += 1;
    }
}

/// Seeded shuffle, then `floor(0.8 N)` train scans and the rest validation.
/// Both halves come back sorted by scan id.
pub fn train_val_split(scans: &[Scan], seed: u64) -> Result<(Vec<Scan>, Vec<Scan>)> {
    if scans.len() < MIN_SHARD_SCANS {
        return Err(FedError::Config(format!(
            "a train/validation split needs at least {MIN_SHARD_SCANS} scans, got {}",
            scans.len()
        )));
    }
    let mut order: Vec<usize> = (0..scans.len()).collect();
    order.shuffle(&mut stream(seed, &[tag::SPLIT]));
    let n_train = 4 * scans.len() / 5;
    let pick = |idx: &[usize]| {
        let mut out: Vec<Scan> = idx.iter().map(|&i| scans[i].clone()).collect();
        out.sort_by_key(|s| s.id);
        out
    };
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

/// Splits `dataset` into one shard per proportion. Sizes come from
/// largest-remainder rounding, then every shard is topped up to
/// [`MIN_SHARD_SCANS`] from the largest shard; which scans land where is a
/// seeded shuffle.
pub fn natural_split(dataset: &[Scan], spec: &PartitionSpec, seed: u64) -> Result<Vec<Shard>> {
    spec.validate()?;
    let k = spec.proportions.len();
    if dataset.len() < MIN_SHARD_SCANS * k {
        return Err(FedError::Config(format!(
            "{} scans cannot give each of {k} institutions {MIN_SHARD_SCANS} scans",
            dataset.len()
        )));
    }
    let mut sizes = apportion(&spec.proportions, dataset.len());
    enforce_minimum(&mut sizes, MIN_SHARD_SCANS);

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut stream(seed, &[tag::PARTITION]));
    let mut offset = 0;
    let mut shards = Vec::with_capacity(k);
    for (i, &size) in sizes.iter().enumerate() {
        let scans: Vec<Scan> = order[offset..offset + size]
            .iter()
            .map(|&j| dataset[j].clone())
            .collect();
        offset += size;
        let (train, validation) = train_val_split(&scans, derive_seed(seed, &[tag::SPLIT, i as u64]))?;
        shards.push(Shard {
            collaborator_id: institution_id(i),
            train,
            validation,
        });
    }
    Ok(shards)
}

/// Re-splits the `largest_k` shards (by training-set size, ties by id) into
/// `bins` sub-shards of consecutive tumour-size ranges. Each sub-shard gets a
/// fresh train/validation split; other shards pass through untouched.
pub fn artificial_split(shards: &[Shard], bins: usize, largest_k: usize, seed: u64) -> Result<Vec<Shard>> {
    if largest_k == 0 {
        return Ok(shards.to_vec());
    }
    if bins < 2 {
        return Err(FedError::Config(format!("artificial split needs at least 2 bins, got {bins}")));
    }
    if largest_k > shards.len() {
        return Err(FedError::Config(format!(
            "cannot re-split {largest_k} of {} shards",
            shards.len()
        )));
    }
    let mut ranked: Vec<usize> = (0..shards.len()).collect();
    ranked.sort_by(|&a, &b| {
        shards[b].train.len().cmp(&shards[a].train.len())
            .then_with(|| shards[a].collaborator_id.cmp(&shards[b].collaborator_id))
    });
    let chosen = &ranked[..largest_k];

    let mut out = Vec::new();
    for (i, shard) in shards.iter().enumerate() {
        if !chosen.contains(&i) {
            out.push(shard.clone());
            continue;
        }
        if shard.len() < MIN_SHARD_SCANS * bins {
            return Err(FedError::Config(format!(
                "shard {} has {} scans, too few for {bins} tumour-size bins",
                shard.collaborator_id,
                shard.len()
            )));
        }
        let mut scans: Vec<Scan> = shard.train.iter().chain(&shard.validation).cloned().collect();
        scans.sort_by_key(|s| (s.tumor_size, s.id));
        let sizes = apportion(&vec![1.0 / bins as f64; bins], scans.len());
        let mut offset = 0;
        for (b, size) in sizes.into_iter().enumerate() {
            let part = &scans[offset..offset + size];
            offset += size;
            let sub_seed = derive_seed(seed, &[tag::SPLIT, i as u64, b as u64 + 1]);
            let (train, validation) = train_val_split(part, sub_seed)?;
            out.push(Shard {
                collaborator_id: format!("{}-s{}", shard.collaborator_id, b + 1),
                train,
                validation,
            });
        }
    }
    Ok(out)
}

/// Natural split, followed by the artificial re-split when `spec.artificial` is set.
pub fn build_shards(dataset: &[Scan], spec: &PartitionSpec, seed: u64) -> Result<Vec<Shard>> {
    let shards = natural_split(dataset, spec, seed)?;
    if spec.artificial {
        artificial_split(&shards, spec.artificial_bins, spec.largest_k, seed)
    } else {
        Ok(shards)
    }
}
