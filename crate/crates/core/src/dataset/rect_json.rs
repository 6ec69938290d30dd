//! Rectangle-annotation JSON as written by LabelMe-style annotation tools:
//!
//! ```json
//! {"imagePath": "a.png", "imageWidth": 640, "imageHeight": 640,
//!  "shapes": [{"label": "ki67_positive", "shape_type": "rectangle",
//!              "points": [[10, 20], [30, 40]]}]}
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::AnnotationSet;
use crate::detection::{BoundingBox, CellClass, GroundTruth};

/// Overhang (in pixels) that is silently clamped back into the frame.
pub const MAX_CLAMP_OVERHANG: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnotationError {
    #[error("malformed annotation document: {0}")]
    MalformedDocument(String),
    #[error("shape {index}: label '{label}' is not in the label map")]
    UnknownLabel { index: usize, label: String },
    #[error("shape {index}: box has zero area after clamping")]
    DegenerateBox { index: usize },
    #[error("shape {index}: box overhangs the image by {overhang:.2} px")]
    OutOfBounds { index: usize, overhang: f64 },
}

/// Annotation label strings mapped to cell classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMap(BTreeMap<String, CellClass>);

impl Default for LabelMap {
    fn default() -> Self {
        let mut m = BTreeMap::new();
        m.insert("ki67_positive".to_string(), CellClass::Ki67Positive);
        m.insert("ki67_negative".to_string(), CellClass::Ki67Negative);
        Self(m)
    }
}

impl LabelMap {
    pub fn new(entries: impl IntoIterator<Item = (String, CellClass)>) -> Self {
        Self(entries.into_iter().collect())
    }

    pub fn insert(&mut self, label: impl Into<String>, cls: CellClass) {
        self.0.insert(label.into(), cls);
    }

    pub fn get(&self, label: &str) -> Option<CellClass> {
        self.0.get(label).copied()
    }

    /// First label mapped to `cls`, used when writing documents.
    pub fn label_for(&self, cls: CellClass) -> Option<&str> {
        self.0
            .iter()
            .find(|(_, c)| **c == cls)
            .map(|(l, _)| l.as_str())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RectShape {
    pub label: String,
    #[serde(default = "default_shape_type")]
    pub shape_type: String,
    pub points: Vec<[f64; 2]>,
}

fn default_shape_type() -> String {
    "rectangle".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RectDocument {
    #[serde(rename = "imagePath")]
    pub image_path: String,
    #[serde(rename = "imageWidth")]
    pub image_width: u32,
    #[serde(rename = "imageHeight")]
    pub image_height: u32,
    pub shapes: Vec<RectShape>,
}

impl RectDocument {
    /// Builds a document for `truths`, labelling each with the first matching
    /// entry of `labels`.
    pub fn from_truths(
        image_path: &str,
        width: u32,
        height: u32,
        truths: &[GroundTruth],
        labels: &LabelMap,
    ) -> Self {
        let shapes = truths
            .iter()
            .map(|t| RectShape {
                label: labels.label_for(t.cls).unwrap_or(t.cls.name()).to_string(),
                shape_type: "rectangle".to_string(),
                points: vec![
                    [t.bbox.x_min(), t.bbox.y_min()],
                    [t.bbox.x_max(), t.bbox.y_max()],
                ],
            })
            .collect();
        Self {
            image_path: image_path.to_string(),
            image_width: width,
            image_height: height,
            shapes,
        }
    }

    /// Image id derived from `imagePath`: the file stem.
    pub fn image_id(&self) -> String {
        Path::new(&self.image_path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.image_path.clone())
    }
}

/// Parsed document plus the non-fatal warnings produced while reading it.
#[derive(Debug, Clone)]
pub struct ParsedRect {
    pub annotations: AnnotationSet,
    pub width: u32,
    pub height: u32,
    pub warnings: Vec<String>,
}

pub fn parse_rect_annotations(doc: &str, labels: &LabelMap) -> Result<ParsedRect, AnnotationError> {
    let doc: RectDocument = serde_json::from_str(doc)
        .map_err(|e| AnnotationError::MalformedDocument(e.to_string()))?;
    if doc.image_width == 0 || doc.image_height == 0 {
        return Err(AnnotationError::MalformedDocument(
            "imageWidth and imageHeight must be positive".into(),
        ));
    }
    let (w, h) = (f64::from(doc.image_width), f64::from(doc.image_height));
    let image_id = doc.image_id();
    let mut truths = Vec::new();
    let mut warnings = Vec::new();

    for (index, shape) in doc.shapes.iter().enumerate() {
        if shape.shape_type != "rectangle" {
            warnings.push(format!(
                "{image_id}: shape {index} has type '{}', skipped",
                shape.shape_type
            ));
            continue;
        }
        let [p, q] = match shape.points.as_slice() {
            [p, q] => [*p, *q],
            other => {
                return Err(AnnotationError::MalformedDocument(format!(
                    "shape {index}: rectangle needs 2 points, got {}",
                    other.len()
                )))
            }
        };
        if p.iter().chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(AnnotationError::MalformedDocument(format!(
                "shape {index}: non-finite coordinate"
            )));
        }
        let cls = labels
            .get(&shape.label)
            .ok_or_else(|| AnnotationError::UnknownLabel {
                index,
                label: shape.label.clone(),
            })?;

        let (x0, x1) = (p[0].min(q[0]), p[0].max(q[0]));
        let (y0, y1) = (p[1].min(q[1]), p[1].max(q[1]));
        let overhang = [-x0, -y0, x1 - w, y1 - h]
            .into_iter()
            .fold(0.0f64, f64::max);
        if overhang > MAX_CLAMP_OVERHANG {
            return Err(AnnotationError::OutOfBounds { index, overhang });
        }
        if overhang > 0.0 {
            warnings.push(format!(
                "{image_id}: shape {index} overhangs by {overhang:.2} px, clamped"
            ));
        }
        let bbox = BoundingBox::new(x0.clamp(0.0, w), y0.clamp(0.0, h), x1.clamp(0.0, w), y1.clamp(0.0, h))
            .map_err(|_| AnnotationError::DegenerateBox { index })?;
        truths.push(GroundTruth::new(bbox, cls));
    }

    Ok(ParsedRect {
        annotations: AnnotationSet { image_id, truths },
        width: doc.image_width,
        height: doc.image_height,
        warnings,
    })
}
