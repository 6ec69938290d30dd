//! Deterministic train/val/test assignment.
//!
//! Split units are base images by default; augmented records inherit their
//! parent's split. `group_by_case` makes whole cases the unit. `ignore_lineage`
//! treats every record as its own unit, which reproduces a split of an
//! already-augmented pool but can place augmented twins in different splits.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DatasetManifest, Split};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Allocation {
    /// Train, val, test fractions summing to 1.
    Fractions([f64; 3]),
    /// Exact train, val, test unit counts.
    Counts([usize; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub allocation: Allocation,
    pub seed: u64,
    #[serde(default)]
    pub group_by_case: bool,
    #[serde(default)]
    pub ignore_lineage: bool,
}

impl SplitSpec {
    pub fn fractions(train: f64, val: f64, test: f64, seed: u64) -> Self {
        Self {
            allocation: Allocation::Fractions([train, val, test]),
            seed,
            group_by_case: false,
            ignore_lineage: false,
        }
    }

    pub fn counts(train: usize, val: usize, test: usize, seed: u64) -> Self {
        Self {
            allocation: Allocation::Counts([train, val, test]),
            seed,
            group_by_case: false,
            ignore_lineage: false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplitError {
    #[error("manifest already has a split (pass overwrite to replace it)")]
    AlreadySplit,
    #[error("explicit counts sum to {got} but there are {expected} split units")]
    CountMismatch { expected: usize, got: usize },
    #[error("fractions must each lie in [0, 1] and sum to 1, got {0:?}")]
    InvalidFractions([f64; 3]),
    #[error("record '{image_id}' names parent '{parent_id}', which is not a base record")]
    UnknownParent { image_id: String, parent_id: String },
}

/// Largest-remainder apportionment of `n` units; remainder ties go to the
/// earlier split.
fn apportion(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let quotas = fractions.map(|f| n as f64 * f);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

pub fn split_dataset(
    m: &DatasetManifest,
    spec: &SplitSpec,
    overwrite: bool,
) -> Result<DatasetManifest, SplitError> {
    if m.split.is_some() && !overwrite {
        return Err(SplitError::AlreadySplit);
    }

    let base_ids: BTreeSet<&str> = m.base_records().map(|r| r.image_id.as_str()).collect();
    // unit key for every record
    let mut unit_of: BTreeMap<&str, String> = BTreeMap::new();
    for r in &m.records {
        let unit = if spec.group_by_case {
            r.case_id.clone()
        } else if spec.ignore_lineage {
            r.image_id.clone()
        } else {
            match &r.parent_id {
                None => r.image_id.clone(),
                Some(p) => {
                    if !base_ids.contains(p.as_str()) {
                        return Err(SplitError::UnknownParent {
                            image_id: r.image_id.clone(),
                            parent_id: p.clone(),
                        });
                    }
                    p.clone()
                }
            }
        };
        unit_of.insert(r.image_id.as_str(), unit);
    }

    let mut units: Vec<&String> = unit_of.values().collect();
    units.sort();
    units.dedup();

    let counts = match spec.allocation {
        Allocation::Counts(c) => {
            let got: usize = c.iter().sum();
            if got != units.len() {
                return Err(SplitError::CountMismatch {
                    expected: units.len(),
                    got,
                });
            }
            c
        }
        Allocation::Fractions(f) => {
            let in_range = f.iter().all(|v| (0.0..=1.0).contains(v));
            if !in_range || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(SplitError::InvalidFractions(f));
            }
            apportion(units.len(), f)
        }
    };

    let mut rng = SeededRng::derive(spec.seed, "split");
    rng.shuffle(&mut units);

    let mut unit_split: BTreeMap<&str, Split> = BTreeMap::new();
    let mut cursor = units.iter();
    for (split, n) in Split::ALL.into_iter().zip(counts) {
        for unit in cursor.by_ref().take(n) {
            unit_split.insert(unit.as_str(), split);
        }
    }

    let split = unit_of
        .iter()
        .map(|(id, unit)| (id.to_string(), unit_split[unit.as_str()]))
        .collect();
    let mut out = m.clone();
    out.split = Some(split);
    Ok(out)
}
