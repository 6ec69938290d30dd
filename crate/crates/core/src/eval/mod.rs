//! Detection evaluation at a fixed IoU threshold: greedy matching, PR curves,
//! all-point interpolated AP, mAP50 and run comparison.

mod compare;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetManifest, Split};
use crate::detection::{iou, priority_indices, CellClass, Detection, GroundTruth};

pub use compare::{compare_runs, ComparisonRow, ComparisonTable};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no ground truth for class {0}")]
    NoGroundTruth(CellClass),
    #[error("the evaluated subset contains no images")]
    EmptySubset,
    #[error("the evaluated subset contains no ground-truth boxes")]
    NoTruthsInSubset,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedDetection {
    pub detection: Detection,
    /// Index into the image's truth list, when this detection is a TP.
    pub truth: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassMatch {
    /// Detections in processing order.
    pub pairs: Vec<MatchedDetection>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Per-class matching result for one image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchOutcome {
    classes: [ClassMatch; 2],
}

impl MatchOutcome {
    pub fn class(&self, cls: CellClass) -> &ClassMatch {
        &self.classes[cls.code() as usize]
    }

    pub fn n_truths(&self, cls: CellClass) -> usize {
        let c = self.class(cls);
        c.tp + c.fn_
    }
}

/// Greedy matching: detections in descending confidence take the unmatched
/// same-class truth with the highest IoU, if that IoU reaches `iou_thresh`.
/// IoU ties go to the lower truth index.
pub fn match_image(dets: &[Detection], truths: &[GroundTruth], iou_thresh: f64) -> MatchOutcome {
    let mut outcome = MatchOutcome::default();
    let order = priority_indices(dets);
    let mut taken = vec![false; truths.len()];

    for cls in CellClass::ALL {
        let slot = &mut outcome.classes[cls.code() as usize];
        for &i in order.iter().filter(|&&i| dets[i].cls == cls) {
            let d = dets[i];
            let mut best: Option<(usize, f64)> = None;
            for (j, t) in truths.iter().enumerate() {
                if t.cls != cls || taken[j] {
                    continue;
                }
                let v = iou(&d.bbox, &t.bbox);
                if v >= iou_thresh && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            let truth = best.map(|(j, _)| j);
            if let Some(j) = truth {
                taken[j] = true;
                slot.tp += 1;
            } else {
                slot.fp += 1;
            }
            slot.pairs.push(MatchedDetection { detection: d, truth });
        }
        let n_truths = truths.iter().filter(|t| t.cls == cls).count();
        slot.fn_ = n_truths - slot.tp;
    }
    outcome
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision/recall after each distinct confidence level, highest first.
/// Detections sharing a confidence enter the sweep together.
pub fn pr_curve(outcomes: &[MatchOutcome], cls: CellClass) -> Result<Vec<PrPoint>, EvalError> {
    let n_truths: usize = outcomes.iter().map(|o| o.n_truths(cls)).sum();
    if n_truths == 0 {
        return Err(EvalError::NoGroundTruth(cls));
    }
    let mut scored: Vec<(f64, bool)> = outcomes
        .iter()
        .flat_map(|o| o.class(cls).pairs.iter())
        .map(|p| (p.detection.confidence, p.truth.is_some()))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut curve = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let threshold = scored[i].0;
        while i < scored.len() && scored[i].0 == threshold {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.push(PrPoint {
            threshold,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / n_truths as f64,
        });
    }
    Ok(curve)
}

/// All-point interpolated AP: area under the right-to-left running maximum
/// of precision over recall in `[0, 1]`.
pub fn average_precision(curve: &[PrPoint]) -> f64 {
    let mut envelope: Vec<f64> = curve.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, env) in curve.iter().zip(&envelope) {
        ap += (p.recall - prev_recall) * env;
        prev_recall = p.recall;
    }
    ap.clamp(0.0, 1.0)
}

/// Comma-separated `threshold,precision,recall` with a header row.
pub fn pr_curve_csv(curve: &[PrPoint]) -> String {
    let mut out = String::from("threshold,precision,recall\n");
    for p in curve {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.precision, p.recall));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: CellClass,
    pub class_name: String,
    pub n_truths: usize,
    pub n_detections: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Over all detections; 0 when there are none.
    pub precision: f64,
    /// 0 when the class has no ground truth.
    pub recall: f64,
    /// `None` when the class has no ground truth in the subset.
    pub ap50: Option<f64>,
    pub curve: Vec<PrPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub run_label: String,
    pub iou_threshold: f64,
    pub image_count: usize,
    pub classes: Vec<ClassMetrics>,
    /// Mean AP over classes with at least one ground truth.
    pub map50: f64,
}

impl EvaluationReport {
    pub fn class(&self, cls: CellClass) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.class == cls)
    }

    pub fn ap(&self, cls: CellClass) -> Option<f64> {
        self.class(cls).and_then(|c| c.ap50)
    }
}

/// Builds a report from per-image outcomes.
pub fn summarize(run_label: &str, outcomes: &[MatchOutcome], iou_threshold: f64) -> Result<EvaluationReport, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::EmptySubset);
    }
    let mut classes = Vec::new();
    for cls in CellClass::ALL {
        let (tp, fp, fn_) = outcomes.iter().fold((0, 0, 0), |acc, o| {
            let c = o.class(cls);
            (acc.0 + c.tp, acc.1 + c.fp, acc.2 + c.fn_)
        });
        let n_truths = tp + fn_;
        let n_detections = tp + fp;
        let (ap50, curve) = match pr_curve(outcomes, cls) {
            Ok(curve) => (Some(average_precision(&curve)), curve),
            Err(_) => (None, Vec::new()),
        };
        classes.push(ClassMetrics {
            class: cls,
            class_name: cls.name().to_string(),
            n_truths,
            n_detections,
            tp,
            fp,
            fn_,
            precision: if n_detections > 0 { tp as f64 / n_detections as f64 } else { 0.0 },
            recall: if n_truths > 0 { tp as f64 / n_truths as f64 } else { 0.0 },
            ap50,
            curve,
        });
    }
    let aps: Vec<f64> = classes.iter().filter_map(|c| c.ap50).collect();
    if aps.is_empty() {
        return Err(EvalError::NoTruthsInSubset);
    }
    Ok(EvaluationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        run_label: run_label.to_string(),
        iou_threshold,
        image_count: outcomes.len(),
        classes,
        map50: aps.iter().sum::<f64>() / aps.len() as f64,
    })
}

/// Evaluates post-NMS detections against the manifest's truths for the
/// images in `split` (all images when `None`). Images without predictions
/// count as silent; predictions for images outside the subset are ignored.
pub fn evaluate_run(
    run_label: &str,
    predictions: &BTreeMap<String, Vec<Detection>>,
    manifest: &DatasetManifest,
    split: Option<Split>,
    iou_threshold: f64,
) -> Result<EvaluationReport, EvalError> {
    let subset = manifest.subset(split);
    if subset.is_empty() {
        return Err(EvalError::EmptySubset);
    }
    let outcomes: Vec<MatchOutcome> = subset
        .par_iter()
        .map(|r| {
            let dets = predictions.get(&r.image_id).map(Vec::as_slice).unwrap_or(&[]);
            match_image(dets, manifest.truths(&r.image_id), iou_threshold)
        })
        .collect();
    summarize(run_label, &outcomes, iou_threshold)
}
