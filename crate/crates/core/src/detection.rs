//! Geometry primitives shared by every other module.
//!
//! Boxes are axis-aligned rectangles in pixel coordinates with the origin at
//! the top-left corner of the image. Normalized formats only appear at
//! serialization boundaries (see [`crate::dataset::yolo`]).

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box coordinates must be finite and non-negative: ({0}, {1}, {2}, {3})")]
    InvalidCoordinate(f64, f64, f64, f64),
    #[error("box has zero or negative extent: ({0}, {1}, {2}, {3})")]
    Degenerate(f64, f64, f64, f64),
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
    #[error("unknown class code {0}")]
    UnknownClass(i64),
}

/// Axis-aligned pixel rectangle. Construction enforces `x_min < x_max`,
/// `y_min < y_max` and finite, non-negative coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

#[derive(Deserialize)]
struct RawBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl TryFrom<RawBox> for BoundingBox {
    type Error = GeometryError;

    fn try_from(raw: RawBox) -> Result<Self, Self::Error> {
        BoundingBox::new(raw.x_min, raw.y_min, raw.x_max, raw.y_max)
    }
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let coords = [x_min, y_min, x_max, y_max];
        if coords.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(GeometryError::InvalidCoordinate(x_min, y_min, x_max, y_max));
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(GeometryError::Degenerate(x_min, y_min, x_max, y_max));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Builds a box from two arbitrary corner points, normalizing their order.
    pub fn from_corners(p: (f64, f64), q: (f64, f64)) -> Result<Self, GeometryError> {
        Self::new(p.0.min(q.0), p.1.min(q.1), p.0.max(q.0), p.1.max(q.1))
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    /// Area of the overlap with `other`; zero for disjoint or edge-touching boxes.
    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        w * h
    }

    /// True when the box lies inside `[0, width] x [0, height]`.
    pub fn fits_within(&self, width: f64, height: f64) -> bool {
        self.x_max <= width && self.y_max <= height
    }

    /// Intersection with the frame `[0, width] x [0, height]`, or `None` if nothing remains.
    pub fn clip_to(&self, width: f64, height: f64) -> Option<BoundingBox> {
        BoundingBox::new(
            self.x_min.max(0.0),
            self.y_min.max(0.0),
            self.x_max.min(width),
            self.y_max.min(height),
        )
        .ok()
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.x_min, self.y_min, self.x_max, self.y_max
        )
    }
}

/// The two detection targets. Serialized everywhere as the integer code
/// (0 = positive, 1 = negative).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CellClass {
    Ki67Positive,
    Ki67Negative,
}

impl CellClass {
    pub const ALL: [CellClass; 2] = [CellClass::Ki67Positive, CellClass::Ki67Negative];

    pub fn code(self) -> u8 {
        match self {
            CellClass::Ki67Positive => 0,
            CellClass::Ki67Negative => 1,
        }
    }

    pub fn from_code(code: i64) -> Result<Self, GeometryError> {
        match code {
            0 => Ok(CellClass::Ki67Positive),
            1 => Ok(CellClass::Ki67Negative),
            other => Err(GeometryError::UnknownClass(other)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellClass::Ki67Positive => "ki67_positive",
            CellClass::Ki67Negative => "ki67_negative",
        }
    }

    pub fn toggled(self) -> Self {
        match self {
            CellClass::Ki67Positive => CellClass::Ki67Negative,
            CellClass::Ki67Negative => CellClass::Ki67Positive,
        }
    }
}

impl fmt::Display for CellClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for CellClass {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.code())
    }
}

impl<'de> Deserialize<'de> for CellClass {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let code = i64::deserialize(deserializer)?;
        CellClass::from_code(code).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDetection")]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(rename = "class")]
    pub cls: CellClass,
    pub confidence: f64,
}

#[derive(Deserialize)]
struct RawDetection {
    #[serde(rename = "box")]
    bbox: BoundingBox,
    #[serde(rename = "class")]
    cls: CellClass,
    confidence: f64,
}

impl TryFrom<RawDetection> for Detection {
    type Error = GeometryError;

    fn try_from(raw: RawDetection) -> Result<Self, Self::Error> {
        Detection::new(raw.bbox, raw.cls, raw.confidence)
    }
}

impl Detection {
    pub fn new(bbox: BoundingBox, cls: CellClass, confidence: f64) -> Result<Self, GeometryError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(GeometryError::Confidence(confidence));
        }
        Ok(Self {
            bbox,
            cls,
            confidence,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(rename = "class")]
    pub cls: CellClass,
}

impl GroundTruth {
    pub fn new(bbox: BoundingBox, cls: CellClass) -> Self {
        Self { bbox, cls }
    }
}

/// Intersection over union. Symmetric, in `[0, 1]`, and 0 for boxes that
/// share only an edge.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Keeps detections with `confidence >= min_conf`, preserving order.
pub fn filter_confidence(dets: &[Detection], min_conf: f64) -> Vec<Detection> {
    dets.iter()
        .filter(|d| d.confidence >= min_conf)
        .copied()
        .collect()
}

/// Processing order used by NMS and matching: confidence descending, then
/// smaller `x_min`, smaller `y_min`, lower class code.
pub fn priority_order(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then_with(|| a.bbox.x_min.total_cmp(&b.bbox.x_min))
        .then_with(|| a.bbox.y_min.total_cmp(&b.bbox.y_min))
        .then_with(|| a.cls.code().cmp(&b.cls.code()))
}

/// Indices of `dets` sorted by [`priority_order`]; full ties keep input order.
pub fn priority_indices(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| priority_order(&dets[i], &dets[j]));
    order
}

/// Greedy NMS returning indices into `dets` of the kept detections, in
/// priority order.
pub fn nms_indices(dets: &[Detection], iou_threshold: f64, class_aware: bool) -> Vec<usize> {
    let order = priority_indices(dets);
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();

    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[pos + 1..] {
            if suppressed[j] || (class_aware && dets[j].cls != dets[i].cls) {
                continue;
            }
            if iou(&dets[i].bbox, &dets[j].bbox) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// Greedy non-maximum suppression. The output is a subset of the input,
/// sorted by [`priority_order`].
pub fn nms(dets: &[Detection], iou_threshold: f64, class_aware: bool) -> Vec<Detection> {
    nms_indices(dets, iou_threshold, class_aware)
        .into_iter()
        .map(|i| dets[i])
        .collect()
}
