use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Mutex;

use chrono::Utc;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::log::{EventStore, LogBackend, LogError};
use super::{apply_correction, replay, CorrectionAction, CorrectionError, CorrectionEvent, ImageReviewState};
use crate::dataset::DatasetManifest;
use crate::detection::{nms, Detection};
use crate::predictions::{postprocess, PredictionSet};
use crate::raster::{RasterError, RasterImage};
use crate::reporting::{render_overlay, OverlayStyle};
use crate::scoring::{score_case_images, Aggregation, CaseScore, ClinicalBand, ScoringConfig, ScoringError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown case '{0}'")]
    UnknownCase(String),
    #[error("unknown image '{0}'")]
    UnknownImage(String),
    #[error(transparent)]
    Correction(#[from] CorrectionError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("replaying log for case '{case_id}': {source}")]
    Replay {
        case_id: String,
        source: CorrectionError,
    },
    #[error("log for case '{case_id}' references image '{image_id}' outside the case")]
    ForeignEvent { case_id: String, image_id: String },
    #[error("{0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRequest {
    pub action: CorrectionAction,
    pub actor: String,
    pub base_version: u64,
}

/// Overrides for a what-if score. Unset fields use the service config.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WhatIf {
    pub min_conf: Option<f64>,
    pub nms: Option<f64>,
    pub mode: Option<Aggregation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub case_id: String,
    pub n_images: usize,
    pub index_percent: Option<f64>,
    pub band: Option<ClinicalBand>,
    pub adequate: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSummary {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub version: u64,
    pub n_detections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseDetail {
    pub case_id: String,
    pub images: Vec<ImageSummary>,
    pub score: Option<CaseScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageView {
    pub case_id: String,
    pub width: u32,
    pub height: u32,
    #[serde(flatten)]
    pub state: ImageReviewState,
}

struct ImageSlot {
    case_id: String,
    frame: (u32, u32),
    source_path: PathBuf,
    state: Mutex<ImageReviewState>,
}

struct CaseLog {
    store: Box<dyn EventStore>,
    next_id: u64,
}

struct CaseSlot {
    image_ids: Vec<String>,
    log: Mutex<CaseLog>,
}

/// Review state for every base image of a manifest. Writes to one image are
/// serialized by that image's lock; different images proceed independently.
pub struct ReviewService {
    config: ScoringConfig,
    style: OverlayStyle,
    images: BTreeMap<String, ImageSlot>,
    cases: BTreeMap<String, CaseSlot>,
}

impl ReviewService {
    /// Builds initial states from `predictions` (class-aware NMS at the
    /// configured threshold, no confidence cut) and replays each case's log.
    pub fn open(
        manifest: &DatasetManifest,
        predictions: &PredictionSet,
        config: ScoringConfig,
        mut backend: LogBackend,
    ) -> Result<Self, ServiceError> {
        let model = postprocess(predictions, 0.0, config.nms_threshold);
        for id in model.keys() {
            if manifest.record(id).is_none() {
                log::warn!("predictions for '{id}' ignored: not in the manifest");
            }
        }
        let mut images = BTreeMap::new();
        let mut cases: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for r in manifest.base_records() {
            let dets = model.get(&r.image_id).map(Vec::as_slice).unwrap_or(&[]);
            images.insert(
                r.image_id.clone(),
                ImageSlot {
                    case_id: r.case_id.clone(),
                    frame: (r.width, r.height),
                    source_path: r.source_path.clone(),
                    state: Mutex::new(ImageReviewState::from_model(&r.image_id, dets)),
                },
            );
            cases.entry(r.case_id.clone()).or_default().push(r.image_id.clone());
        }

        let mut case_slots = BTreeMap::new();
        for (case_id, image_ids) in cases {
            let mut store = backend.open(&case_id);
            let events = store.load()?;
            let mut last = 0;
            let mut per_image: BTreeMap<&str, Vec<CorrectionEvent>> = BTreeMap::new();
            for ev in events {
                if ev.event_id <= last {
                    return Err(ServiceError::Replay {
                        case_id,
                        source: CorrectionError::EventOrder { last, got: ev.event_id },
                    });
                }
                last = ev.event_id;
                let Some(id) = image_ids.iter().find(|id| **id == ev.image_id) else {
                    return Err(ServiceError::ForeignEvent {
                        case_id,
                        image_id: ev.image_id,
                    });
                };
                per_image.entry(id.as_str()).or_default().push(ev);
            }
            for (id, evs) in per_image {
                let slot = images.get_mut(id).expect("event image belongs to the case");
                let state = slot.state.get_mut().expect("fresh lock");
                *state = replay(state, &evs, slot.frame).map_err(|source| ServiceError::Replay {
                    case_id: case_id.clone(),
                    source,
                })?;
            }
            case_slots.insert(
                case_id,
                CaseSlot {
                    image_ids,
                    log: Mutex::new(CaseLog { store, next_id: last + 1 }),
                },
            );
        }
        Ok(Self {
            config,
            style: OverlayStyle::default(),
            images,
            cases: case_slots,
        })
    }

    pub fn config(&self) -> &ScoringConfig {
        &self.config
    }

    fn slot(&self, image_id: &str) -> Result<&ImageSlot, ServiceError> {
        self.images
            .get(image_id)
            .ok_or_else(|| ServiceError::UnknownImage(image_id.to_string()))
    }

    fn case(&self, case_id: &str) -> Result<&CaseSlot, ServiceError> {
        self.cases
            .get(case_id)
            .ok_or_else(|| ServiceError::UnknownCase(case_id.to_string()))
    }

    pub fn state(&self, image_id: &str) -> Result<ImageReviewState, ServiceError> {
        Ok(self.slot(image_id)?.state.lock().expect("image lock").clone())
    }

    pub fn image(&self, image_id: &str) -> Result<ImageView, ServiceError> {
        let slot = self.slot(image_id)?;
        Ok(ImageView {
            case_id: slot.case_id.clone(),
            width: slot.frame.0,
            height: slot.frame.1,
            state: slot.state.lock().expect("image lock").clone(),
        })
    }

    /// Validates, logs durably, then applies. Nothing changes on error.
    pub fn submit(&self, image_id: &str, req: CorrectionRequest) -> Result<ImageReviewState, ServiceError> {
        let slot = self.slot(image_id)?;
        let mut state = slot.state.lock().expect("image lock");
        let mut log = self.case(&slot.case_id)?.log.lock().expect("case log lock");
        let ev = CorrectionEvent {
            event_id: log.next_id,
            image_id: image_id.to_string(),
            action: req.action,
            actor: req.actor,
            timestamp: Utc::now(),
            base_version: req.base_version,
        };
        let next = apply_correction(&state, &ev, slot.frame)?;
        log.store.append(&ev)?;
        log.next_id += 1;
        *state = next.clone();
        Ok(next)
    }

    /// Detections that currently count for `image_id` under `what_if`.
    fn effective(&self, image_id: &str, what_if: &WhatIf) -> Result<Vec<Detection>, ServiceError> {
        let min_conf = what_if.min_conf.unwrap_or(self.config.min_conf);
        let dets = self.slot(image_id)?.state.lock().expect("image lock").effective(min_conf);
        Ok(match what_if.nms {
            Some(t) if t != self.config.nms_threshold => nms(&dets, t, true),
            _ => dets,
        })
    }

    pub fn recompute_scores(&self, case_id: &str) -> Result<CaseScore, ServiceError> {
        self.what_if(case_id, &WhatIf::default())
    }

    /// Scores a case from the current review state. A what-if NMS threshold
    /// is applied on top of the current detections.
    pub fn what_if(&self, case_id: &str, what_if: &WhatIf) -> Result<CaseScore, ServiceError> {
        if let Some(c) = what_if.min_conf {
            if !(0.0..=1.0).contains(&c) {
                return Err(ServiceError::InvalidParameter(format!("min_conf {c} outside [0, 1]")));
            }
        }
        if let Some(t) = what_if.nms {
            if !(0.0..=1.0).contains(&t) {
                return Err(ServiceError::InvalidParameter(format!("nms {t} outside [0, 1]")));
            }
        }
        let case = self.case(case_id)?;
        let per_image = case
            .image_ids
            .iter()
            .map(|id| Ok((id.as_str(), self.effective(id, what_if)?)))
            .collect::<Result<Vec<_>, ServiceError>>()?;
        let config = ScoringConfig {
            min_conf: what_if.min_conf.unwrap_or(self.config.min_conf),
            nms_threshold: what_if.nms.unwrap_or(self.config.nms_threshold),
            aggregation: what_if.mode.unwrap_or(self.config.aggregation),
        };
        Ok(score_case_images(
            case_id,
            per_image.iter().map(|(id, d)| (*id, d.as_slice())),
            &config,
        )?)
    }

    pub fn cases(&self) -> Vec<CaseSummary> {
        self.cases
            .iter()
            .map(|(case_id, c)| {
                let score = self.recompute_scores(case_id).ok();
                CaseSummary {
                    case_id: case_id.clone(),
                    n_images: c.image_ids.len(),
                    index_percent: score.as_ref().map(|s| s.index_percent),
                    band: score.as_ref().map(|s| s.band),
                    adequate: score.as_ref().map(|s| s.adequate),
                }
            })
            .collect()
    }

    pub fn case_detail(&self, case_id: &str) -> Result<CaseDetail, ServiceError> {
        let case = self.case(case_id)?;
        let images = case
            .image_ids
            .iter()
            .map(|id| {
                let slot = &self.images[id];
                let state = slot.state.lock().expect("image lock");
                ImageSummary {
                    image_id: id.clone(),
                    width: slot.frame.0,
                    height: slot.frame.1,
                    version: state.version,
                    n_detections: state.detections.len(),
                }
            })
            .collect();
        Ok(CaseDetail {
            case_id: case_id.to_string(),
            images,
            score: self.recompute_scores(case_id).ok(),
        })
    }

    pub fn raster(&self, image_id: &str) -> Result<RasterImage, ServiceError> {
        Ok(RasterImage::load_png(&self.slot(image_id)?.source_path)?)
    }

    /// The image with its currently counted detections drawn on it.
    pub fn overlay(&self, image_id: &str) -> Result<RasterImage, ServiceError> {
        let img = self.raster(image_id)?;
        let dets = self.effective(image_id, &WhatIf::default())?;
        Ok(render_overlay(&img, &dets, &self.style))
    }
}
