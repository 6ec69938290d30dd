//! Ki-67 proliferation index per hotspot image and per case.
//!
//! The index is the positive share of counted tumor cells, in percent. A
//! case pools the counts of its hotspot images before dividing, so every
//! cell weighs the same. Cases with fewer than 500 counted cells are flagged
//! as inadequate. Bands: below 5 is Low, above 30 is High, anything from 5
//! to 30 inclusive is Intermediate.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetManifest;
use crate::detection::{CellClass, Detection};

pub const MIN_ADEQUATE_CELLS: usize = 500;
pub const LOW_BAND_BELOW: f64 = 5.0;
pub const HIGH_BAND_ABOVE: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("no cells counted")]
    NoCells,
    #[error("case has no hotspot images")]
    EmptyCase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClinicalBand {
    Low,
    Intermediate,
    High,
}

impl fmt::Display for ClinicalBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Sum counts over hotspots, then divide.
    #[default]
    Pooled,
    /// Arithmetic mean of per-hotspot indices.
    MeanOfHotspots,
}

impl std::str::FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pooled" => Ok(Aggregation::Pooled),
            "mean_of_hotspots" | "mean" => Ok(Aggregation::MeanOfHotspots),
            other => Err(format!("unknown aggregation mode '{other}' (expected pooled or mean_of_hotspots)")),
        }
    }
}

/// Settings echoed into every case score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub min_conf: f64,
    pub nms_threshold: f64,
    pub aggregation: Aggregation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotspotScore {
    pub image_id: String,
    pub n_pos: usize,
    pub n_neg: usize,
    pub index_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub case_id: String,
    pub hotspots: Vec<HotspotScore>,
    /// Images left out of pooling because no cells were detected on them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded_images: Vec<String>,
    pub pooled_pos: usize,
    pub pooled_neg: usize,
    pub index_percent: f64,
    pub total_cells: usize,
    pub adequate: bool,
    pub band: ClinicalBand,
    pub config: ScoringConfig,
}

pub fn ki67_index(n_pos: usize, n_neg: usize) -> Result<f64, ScoringError> {
    let total = n_pos + n_neg;
    if total == 0 {
        return Err(ScoringError::NoCells);
    }
    Ok(100.0 * n_pos as f64 / total as f64)
}

pub fn classify_band(index_percent: f64) -> ClinicalBand {
    if index_percent < LOW_BAND_BELOW {
        ClinicalBand::Low
    } else if index_percent > HIGH_BAND_ABOVE {
        ClinicalBand::High
    } else {
        ClinicalBand::Intermediate
    }
}

/// Counts detections per class. The caller passes post-NMS, confidence-filtered detections.
pub fn score_image(image_id: &str, dets: &[Detection]) -> Result<HotspotScore, ScoringError> {
    let n_pos = dets.iter().filter(|d| d.cls == CellClass::Ki67Positive).count();
    let n_neg = dets.len() - n_pos;
    Ok(HotspotScore {
        image_id: image_id.to_string(),
        n_pos,
        n_neg,
        index_percent: ki67_index(n_pos, n_neg)?,
    })
}

pub fn score_case(
    case_id: &str,
    hotspots: Vec<HotspotScore>,
    config: &ScoringConfig,
) -> Result<CaseScore, ScoringError> {
    if hotspots.is_empty() {
        return Err(ScoringError::EmptyCase);
    }
    let pooled_pos: usize = hotspots.iter().map(|h| h.n_pos).sum();
    let pooled_neg: usize = hotspots.iter().map(|h| h.n_neg).sum();
    let index_percent = match config.aggregation {
        Aggregation::Pooled => ki67_index(pooled_pos, pooled_neg)?,
        Aggregation::MeanOfHotspots => {
            let counted: Vec<f64> = hotspots
                .iter()
                .filter(|h| h.n_pos + h.n_neg > 0)
                .map(|h| h.index_percent)
                .collect();
            if counted.is_empty() {
                return Err(ScoringError::NoCells);
            }
            counted.iter().sum::<f64>() / counted.len() as f64
        }
    };
    let total_cells = pooled_pos + pooled_neg;
    Ok(CaseScore {
        case_id: case_id.to_string(),
        hotspots,
        excluded_images: Vec::new(),
        pooled_pos,
        pooled_neg,
        index_percent,
        total_cells,
        adequate: total_cells >= MIN_ADEQUATE_CELLS,
        band: classify_band(index_percent),
        config: *config,
    })
}

/// Scores a case from per-image detections (already post-processed).
/// Images without any detection are excluded from pooling and listed in
/// `excluded_images`.
pub fn score_case_images<'a>(
    case_id: &str,
    images: impl IntoIterator<Item = (&'a str, &'a [Detection])>,
    config: &ScoringConfig,
) -> Result<CaseScore, ScoringError> {
    let mut hotspots = Vec::new();
    let mut excluded = Vec::new();
    let mut any = false;
    for (image_id, dets) in images {
        any = true;
        match score_image(image_id, dets) {
            Ok(h) => hotspots.push(h),
            Err(ScoringError::NoCells) => excluded.push(image_id.to_string()),
            Err(e) => return Err(e),
        }
    }
    if !any {
        return Err(ScoringError::EmptyCase);
    }
    if hotspots.is_empty() {
        return Err(ScoringError::NoCells);
    }
    let mut score = score_case(case_id, hotspots, config)?;
    score.excluded_images = excluded;
    Ok(score)
}

/// Scores one case of a manifest from post-processed detections keyed by
/// image id. Only base (non-augmented) images count, in manifest order.
pub fn score_manifest_case(
    manifest: &DatasetManifest,
    case_id: &str,
    detections: &BTreeMap<String, Vec<Detection>>,
    config: &ScoringConfig,
) -> Result<CaseScore, ScoringError> {
    let images = manifest
        .case_records(case_id)
        .into_iter()
        .filter(|r| !r.is_augmented())
        .map(|r| {
            let dets = detections.get(&r.image_id).map(Vec::as_slice).unwrap_or(&[]);
            (r.image_id.as_str(), dets)
        });
    score_case_images(case_id, images, config)
}
