//! "What-to-compare" pose pair selection.
//!
//! Cross-drive candidates are pose pairs of different drives whose
//! noisy positions lie within a distance bound; a per-pair Bernoulli
//! draw thins them to the requested rate. All consecutive pose pairs of
//! every drive are always included. Candidate search uses a uniform
//! grid hash sized to the distance bound, so runtime stays near-linear
//! in pose count for bounded pose density.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::fleet::FleetDataset;
use crate::seeding::{fnv1a64, splitmix64};
use crate::{Error, Result};

/// Reference to one pose of the dataset: (drive index, pose index).
/// Drive indices follow the dataset's drive order; ids are resolved at
/// I/O boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PoseRef {
    pub drive: usize,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    CrossDrive,
    Consecutive,
}

/// An unordered pose pair scheduled for correlation, stored with
/// `a < b` canonically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCandidate {
    pub a: PoseRef,
    pub b: PoseRef,
    pub kind: PairKind,
}

/// Sampling parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Maximum distance between noisy positions of a cross-drive pair.
    pub max_distance: f64,
    /// Bernoulli keep-probability for eligible cross-drive pairs.
    pub rate: f64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            max_distance: 20.0,
            rate: 0.10,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "sampling rate must be in (0, 1], got {}",
                self.rate
            )));
        }
        if !(self.max_distance > 0.0) {
            return Err(Error::InvalidInput("max_distance must be > 0".into()));
        }
        Ok(())
    }
}

/// Build the candidate pair list. Deterministic for a fixed seed: the
/// keep/drop decision of each eligible pair hashes (seed, pair), so it
/// does not depend on enumeration order.
pub fn sample_pairs(dataset: &FleetDataset, config: &SamplingConfig) -> Result<Vec<PairCandidate>> {
    config.validate()?;

    let mut pairs = Vec::new();

    // Consecutive pairs of every drive, always included.
    for (di, drive) in dataset.drives.iter().enumerate() {
        for i in 0..drive.records.len().saturating_sub(1) {
            pairs.push(PairCandidate {
                a: PoseRef { drive: di, index: i },
                b: PoseRef {
                    drive: di,
                    index: i + 1,
                },
                kind: PairKind::Consecutive,
            });
        }
    }

    // Spatial hash of all noisy positions, cell size = max_distance.
    let cell = config.max_distance;
    let key = |x: f64, y: f64| -> (i64, i64) {
        ((x / cell).floor() as i64, (y / cell).floor() as i64)
    };
    let mut grid: HashMap<(i64, i64), Vec<PoseRef>> = HashMap::new();
    for (di, drive) in dataset.drives.iter().enumerate() {
        for (pi, r) in drive.records.iter().enumerate() {
            grid.entry(key(r.noisy.x, r.noisy.y))
                .or_default()
                .push(PoseRef {
                    drive: di,
                    index: pi,
                });
        }
    }

    let pos = |p: PoseRef| -> (f64, f64) {
        let r = &dataset.drives[p.drive].records[p.index];
        (r.noisy.x, r.noisy.y)
    };
    let max_d2 = config.max_distance * config.max_distance;

    for (di, drive) in dataset.drives.iter().enumerate() {
        for (pi, r) in drive.records.iter().enumerate() {
            let a = PoseRef {
                drive: di,
                index: pi,
            };
            let (kx, ky) = key(r.noisy.x, r.noisy.y);
            for nx in kx - 1..=kx + 1 {
                for ny in ky - 1..=ky + 1 {
                    let Some(bucket) = grid.get(&(nx, ny)) else {
                        continue;
                    };
                    for &b in bucket {
                        // Each unordered cross pair is visited from both
                        // endpoints; emit it only from the smaller one.
                        if b.drive == a.drive || b <= a {
                            continue;
                        }
                        let (bx, by) = pos(b);
                        let d2 = (bx - r.noisy.x).powi(2) + (by - r.noisy.y).powi(2);
                        if d2 > max_d2 {
                            continue;
                        }
                        if pair_kept(config.seed, a, b, config.rate) {
                            pairs.push(PairCandidate {
                                a,
                                b,
                                kind: PairKind::CrossDrive,
                            });
                        }
                    }
                }
            }
        }
    }

    pairs.sort_unstable_by_key(|p| (p.a, p.b));
    Ok(pairs)
}

/// Independent Bernoulli(rate) decision keyed by (seed, pair).
fn pair_kept(seed: u64, a: PoseRef, b: PoseRef, rate: f64) -> bool {
    if rate >= 1.0 {
        return true;
    }
    let mut bytes = Vec::with_capacity(32);
    bytes.extend_from_slice(&(a.drive as u64).to_le_bytes());
    bytes.extend_from_slice(&(a.index as u64).to_le_bytes());
    bytes.extend_from_slice(&(b.drive as u64).to_le_bytes());
    bytes.extend_from_slice(&(b.index as u64).to_le_bytes());
    let h = splitmix64(seed ^ fnv1a64(&bytes));
    (h as f64 / u64::MAX as f64) < rate
}

/// CSV dump of the pair list: `drive_a,idx_a,drive_b,idx_b,kind`.
pub fn write_pairs_csv<W: std::io::Write>(
    w: &mut W,
    dataset: &FleetDataset,
    pairs: &[PairCandidate],
) -> Result<()> {
    writeln!(w, "drive_a,idx_a,drive_b,idx_b,kind")?;
    for p in pairs {
        let kind = match p.kind {
            PairKind::CrossDrive => "cross_drive",
            PairKind::Consecutive => "consecutive",
        };
        writeln!(
            w,
            "{},{},{},{},{}",
            dataset.drives[p.a.drive].drive_id,
            p.a.index,
            dataset.drives[p.b.drive].drive_id,
            p.b.index,
            kind
        )?;
    }
    Ok(())
}
