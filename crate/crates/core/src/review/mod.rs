//! Pathologist review: per-image detection state changed only through
//! versioned correction events, persisted to an append-only log and replayed
//! on startup.

pub mod http;
mod log;
mod service;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{BoundingBox, CellClass, Detection};

pub use self::log::{EventStore, JsonlEventStore, LogBackend, LogError, MemoryEventStore};
pub use service::{
    CaseDetail, CaseSummary, CorrectionRequest, ImageView, ReviewService, ServiceError, WhatIf,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Model,
    Human,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReviewedDetection {
    #[serde(flatten)]
    pub detection: Detection,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CorrectionAction {
    ToggleClass {
        index: usize,
    },
    Delete {
        index: usize,
    },
    Add {
        #[serde(rename = "box")]
        bbox: BoundingBox,
        #[serde(rename = "class")]
        cls: CellClass,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionEvent {
    pub event_id: u64,
    pub image_id: String,
    pub action: CorrectionAction,
    pub actor: String,
    pub timestamp: DateTime<Utc>,
    /// Version of the image state the actor was looking at.
    pub base_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReviewState {
    pub image_id: String,
    pub detections: Vec<ReviewedDetection>,
    pub version: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrectionError {
    #[error("stale version: event based on {got}, image is at {current}")]
    VersionConflict { current: u64, got: u64 },
    #[error("detection index {index} out of range ({len} detections)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("added box {0} does not fit the {1}x{2} image")]
    InvalidBox(BoundingBox, u32, u32),
    #[error("event for image '{got}' applied to '{expected}'")]
    WrongImage { expected: String, got: String },
    #[error("event id {got} does not follow {last}")]
    EventOrder { last: u64, got: u64 },
}

impl ImageReviewState {
    /// Initial state: model detections at version 0.
    pub fn from_model(image_id: impl Into<String>, dets: &[Detection]) -> Self {
        Self {
            image_id: image_id.into(),
            detections: dets
                .iter()
                .map(|&detection| ReviewedDetection {
                    detection,
                    provenance: Provenance::Model,
                })
                .collect(),
            version: 0,
        }
    }

    /// Detections that count towards a score at `min_conf`. Human-added
    /// detections are never confidence-filtered.
    pub fn effective(&self, min_conf: f64) -> Vec<Detection> {
        self.detections
            .iter()
            .filter(|d| d.provenance == Provenance::Human || d.detection.confidence >= min_conf)
            .map(|d| d.detection)
            .collect()
    }
}

/// Applies one event. `frame` is the image's (width, height), used to check
/// added boxes.
pub fn apply_correction(
    state: &ImageReviewState,
    ev: &CorrectionEvent,
    frame: (u32, u32),
) -> Result<ImageReviewState, CorrectionError> {
    if ev.image_id != state.image_id {
        return Err(CorrectionError::WrongImage {
            expected: state.image_id.clone(),
            got: ev.image_id.clone(),
        });
    }
    if ev.base_version != state.version {
        return Err(CorrectionError::VersionConflict {
            current: state.version,
            got: ev.base_version,
        });
    }
    let mut next = state.clone();
    let len = next.detections.len();
    let check = |index: usize| {
        if index < len {
            Ok(index)
        } else {
            Err(CorrectionError::IndexOutOfRange { index, len })
        }
    };
    match ev.action {
        CorrectionAction::ToggleClass { index } => {
            let d = &mut next.detections[check(index)?].detection;
            d.cls = d.cls.toggled();
        }
        CorrectionAction::Delete { index } => {
            next.detections.remove(check(index)?);
        }
        CorrectionAction::Add { bbox, cls } => {
            if !bbox.fits_within(f64::from(frame.0), f64::from(frame.1)) {
                return Err(CorrectionError::InvalidBox(bbox, frame.0, frame.1));
            }
            next.detections.push(ReviewedDetection {
                detection: Detection {
                    bbox,
                    cls,
                    confidence: 1.0,
                },
                provenance: Provenance::Human,
            });
        }
    }
    next.version += 1;
    Ok(next)
}

/// Folds an image's event log over its original model detections. Event ids
/// must be strictly increasing.
pub fn replay(
    original: &ImageReviewState,
    events: &[CorrectionEvent],
    frame: (u32, u32),
) -> Result<ImageReviewState, CorrectionError> {
    let mut state = original.clone();
    let mut last: Option<u64> = None;
    for ev in events {
        if let Some(l) = last {
            if ev.event_id <= l {
                return Err(CorrectionError::EventOrder { last: l, got: ev.event_id });
            }
        }
        last = Some(ev.event_id);
        state = apply_correction(&state, ev, frame)?;
    }
    Ok(state)
}
