use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::rng::{stream, tag};

pub const NUM_CHANNELS: usize = 4;
pub const NUM_CLASSES: usize = 4;

pub const BACKGROUND: u8 = 0;
pub const EDEMA: u8 = 1;
pub const NECROTIC: u8 = 2;
pub const ENHANCING: u8 = 3;

/// Radii of the tumor-core and enhancing ellipses relative to the
/// whole-tumor ellipse.
const CORE_SCALE: f64 = 0.65;
const ENHANCING_SCALE: f64 = 0.4;
/// Largest eccentricity offset applied to the semi-axes when the radius
/// spread is at its maximum relative to the mean radius.
const MAX_ECCENTRICITY: f64 = 0.25;

/// Tumor radius distribution: the whole-tumor radius is drawn uniformly from
/// `mean_radius ± radius_spread`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeParams {
    pub mean_radius: f64,
    pub radius_spread: f64,
}

/// One labelled pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub feature: [f64; NUM_CHANNELS],
    pub label: u8,
}

/// Synthetic 2-D scan: four feature channels per pixel and a nested label
/// map (enhancing inside necrotic core inside edema).
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub id: usize,
    pub seed: u64,
    pub grid_size: usize,
    pub features: Vec<[f64; NUM_CHANNELS]>,
    pub labels: Vec<u8>,
    pub tumor_size: usize,
}

impl Scan {
    pub fn num_pixels(&self) -> usize {
        self.labels.len()
    }

    pub fn sample(&self, pixel: usize) -> Sample {
        Sample {
            feature: self.features[pixel],
            label: self.labels[pixel],
        }
    }

    pub fn all_samples(&self) -> Vec<Sample> {
        (0..self.num_pixels()).map(|p| self.sample(p)).collect()
    }

    /// Fixed pseudo-random pixel subset used as this scan's contribution to
    /// every training epoch. Depends only on the scan's own seed.
    pub fn pixel_subsample(&self, count: usize) -> Vec<Sample> {
        let n = self.num_pixels();
        let count = count.min(n);
        let mut rng = stream(self.seed, &[tag::PIXELS]);
        let mut picked = sample(&mut rng, n, count).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|p| self.sample(p)).collect()
    }
}

/// Generates scans on a fixed grid with a fixed noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanGenerator {
    pub grid_size: usize,
    /// Standard deviation of the per-channel Gaussian feature noise.
    pub noise: f64,
    /// Scale of the per-class mean signatures.
    pub separation: f64,
}

impl Default for ScanGenerator {
    fn default() -> Self {
        Self {
            grid_size: 32,
            noise: 0.3,
            separation: 1.0,
        }
    }
}

impl ScanGenerator {
    /// Mean feature vector of a class: the class's own channel lights up.
    pub fn signature(&self, label: u8) -> [f64; NUM_CHANNELS] {
        let mut s = [0.0; NUM_CHANNELS];
        s[label as usize] = self.separation;
        s
    }

    /// Deterministic scan for `seed`. `id` is carried along for bookkeeping
    /// only and does not influence the content.
    pub fn generate(&self, id: usize, seed: u64, size: SizeParams) -> Result<Scan> {
        let g = self.grid_size;
        if g < 4 {
            return Err(FedError::Usage(format!("grid size {g} is too small")));
        }
        if !(size.mean_radius > 0.0) || size.radius_spread < 0.0 {
            return Err(FedError::Usage(format!(
                "tumor radius must be positive (mean {}, spread {})",
                size.mean_radius, size.radius_spread
            )));
        }
        if size.mean_radius >= g as f64 / 2.0 {
            return Err(FedError::Usage(format!(
                "mean radius {} does not fit a {g}x{g} grid",
                size.mean_radius
            )));
        }
        if size.mean_radius - size.radius_spread <= 0.0 {
            return Err(FedError::Usage(format!(
                "radius spread {} allows non-positive radii around mean {}",
                size.radius_spread, size.mean_radius
            )));
        }

        let mut rng = stream(seed, &[tag::DATASET]);
        let radius = size.mean_radius + size.radius_spread * rng.random_range(-1.0..=1.0);
        let ecc_limit = MAX_ECCENTRICITY * (size.radius_spread / size.mean_radius).min(1.0);
        let ecc = ecc_limit * rng.random_range(-1.0..=1.0);
        let semi_a = radius * (1.0 + ecc);
        let semi_b = radius * (1.0 - ecc);
        let theta = rng.random_range(0.0..std::f64::consts::PI);

        // Integer centres keep the pixel count of a circle independent of
        // where it lands.
        let reach = semi_a.max(semi_b).ceil() as usize;
        let (lo, hi) = if 2 * reach + 1 < g {
            (reach, g - 1 - reach)
        } else {
            (g / 2, g / 2)
        };
        let cy = rng.random_range(lo..=hi) as f64;
        let cx = rng.random_range(lo..=hi) as f64;

        let (sin, cos) = theta.sin_cos();
        let noise = Normal::new(0.0, self.noise)
            .map_err(|e| FedError::Usage(format!("invalid noise level {}: {e}", self.noise)))?;

        let mut labels = Vec::with_capacity(g * g);
        let mut features = Vec::with_capacity(g * g);
        for y in 0..g {
            for x in 0..g {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let u = (dx * cos + dy * sin) / semi_a;
                let v = (-dx * sin + dy * cos) / semi_b;
                let r2 = u * u + v * v;
                let label = if r2 <= ENHANCING_SCALE * ENHANCING_SCALE {
                    ENHANCING
                } else if r2 <= CORE_SCALE * CORE_SCALE {
                    NECROTIC
                } else if r2 <= 1.0 {
                    EDEMA
                } else {
                    BACKGROUND
                };
                let mut f = self.signature(label);
                for c in f.iter_mut() {
                    *c += noise.sample(&mut rng);
                }
                labels.push(label);
                features.push(f);
            }
        }
        let tumor_size = labels.iter().filter(|&&l| l != BACKGROUND).count();
        Ok(Scan {
            id,
            seed,
            grid_size: g,
            features,
            labels,
            tumor_size,
        })
    }

    /// `count` scans with ids `0..count`, each seeded from `(seed, id)`.
    pub fn generate_dataset(&self, count: usize, seed: u64, size: SizeParams) -> Result<Vec<Scan>> {
        (0..count)
            .map(|id| self.generate(id, crate::rng::derive_seed(seed, &[tag::DATASET, id as u64]), size))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen() -> ScanGenerator {
        ScanGenerator::default()
    }

    /// Nesting validator on the composite regions: ET ⊆ TC ⊆ WT.
    fn nested(scan: &Scan) -> bool {
        scan.labels.iter().all(|&l| {
            let in_et = l == ENHANCING;
            let in_tc = l == NECROTIC || l == ENHANCING;
            let in_wt = l != BACKGROUND;
            l <= ENHANCING && (!in_et || in_tc) && (!in_tc || in_wt)
        })
    }

    /// Walking outward along the row through an enhancing pixel never moves
    /// to a deeper region.
    fn radially_monotone(scan: &Scan) -> bool {
        let g = scan.grid_size;
        let Some(centre) = scan.labels.iter().position(|&l| l == ENHANCING) else {
            return true;
        };
        let (cy, cx) = (centre / g, centre % g);
        let row = &scan.labels[cy * g..(cy + 1) * g];
        let depth = |l: u8| match l {
            BACKGROUND => 0,
            EDEMA => 1,
            NECROTIC => 2,
            _ => 3,
        };
        row[cx..].windows(2).all(|w| depth(w[1]) <= depth(w[0]))
            && row[..=cx].windows(2).all(|w| depth(w[0]) <= depth(w[1]))
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let size = SizeParams { mean_radius: 6.0, radius_spread: 2.0 };
        let a = gen().generate(0, 99, size).unwrap();
        let b = gen().generate(0, 99, size).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_spread_fixes_tumor_size_but_not_position() {
        let size = SizeParams { mean_radius: 6.0, radius_spread: 0.0 };
        let a = gen().generate(0, 1, size).unwrap();
        let b = gen().generate(1, 2, size).unwrap();
        assert_eq!(a.tumor_size, b.tumor_size);
        assert_ne!(a.labels, b.labels);
    }

    #[test]
    fn seed_seven_is_nested() {
        let size = SizeParams { mean_radius: 6.0, radius_spread: 2.0 };
        let scan = gen().generate(0, 7, size).unwrap();
        assert_eq!(scan.grid_size, 32);
        assert!(nested(&scan));
        assert!(radially_monotone(&scan));
        assert_eq!(scan.tumor_size, scan.labels.iter().filter(|&&l| l != 0).count());
        assert!(scan.labels.contains(&ENHANCING));
    }

    #[test]
    fn many_seeds_nested() {
        let size = SizeParams { mean_radius: 6.0, radius_spread: 3.0 };
        for seed in 0..50 {
            let scan = gen().generate(seed as usize, seed, size).unwrap();
            assert!(nested(&scan) && radially_monotone(&scan), "seed {seed}");
            assert!(scan.tumor_size > 0);
        }
    }

    #[test]
    fn degenerate_radius_rejected() {
        for (m, s) in [(0.0, 0.0), (-1.0, 0.0), (3.0, 3.0), (16.0, 0.0)] {
            let err = gen().generate(0, 1, SizeParams { mean_radius: m, radius_spread: s });
            assert!(matches!(err, Err(FedError::Usage(_))), "{m} {s}");
        }
    }

    #[test]
    fn pixel_subsample_is_fixed_and_distinct() {
        let scan = gen().generate(0, 5, SizeParams { mean_radius: 6.0, radius_spread: 1.0 }).unwrap();
        let a = scan.pixel_subsample(64);
        assert_eq!(a, scan.pixel_subsample(64));
        assert_eq!(a.len(), 64);
        assert_eq!(scan.pixel_subsample(5000).len(), 32 * 32);
    }
}
