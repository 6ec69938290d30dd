//! Boundary to the external detector.
//!
//! Predictions arrive as JSON lines in original-image pixel coordinates:
//!
//! ```text
//! {"image_id":"h01","class_id":0,"x_min":10.5,"y_min":20,"x_max":31,"y_max":40.25,"confidence":0.91}
//! ```
//!
//! The detector itself is assumed to see letterboxed 640x640 inputs (aspect
//! preserved, gray 114 padding), pixel values scaled to `[0, 1]` and laid
//! out as `B x C x H x W` tensors. Nothing here runs inference; the letterbox
//! geometry is provided so a producer can map boxes back exactly.

use std::collections::BTreeMap;
use std::io::BufRead;

use image::imageops::{self, FilterType};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{filter_confidence, nms, BoundingBox, CellClass, Detection};
use crate::raster::RasterImage;

pub const DEFAULT_NMS_THRESHOLD: f64 = 0.3;
pub const LETTERBOX_TARGET: u32 = 640;
pub const DEFAULT_PAD_FILL: u8 = 114;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictionError {
    #[error("malformed line: {0}")]
    MalformedLine(String),
    #[error("unknown class id {0}")]
    UnknownClassId(i64),
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("cannot read predictions: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawPrediction {
    pub bbox: BoundingBox,
    pub cls: CellClass,
    pub confidence: f64,
}

impl RawPrediction {
    pub fn to_detection(self) -> Detection {
        Detection {
            bbox: self.bbox,
            cls: self.cls,
            confidence: self.confidence,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub run_label: String,
    pub by_image: BTreeMap<String, Vec<RawPrediction>>,
    /// Set when the producer already applied NMS.
    pub post_nms: bool,
}

impl PredictionSet {
    pub fn new(run_label: impl Into<String>) -> Self {
        Self {
            run_label: run_label.into(),
            by_image: BTreeMap::new(),
            post_nms: false,
        }
    }

    pub fn len(&self) -> usize {
        self.by_image.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&mut self, image_id: &str, p: RawPrediction) {
        self.by_image.entry(image_id.to_string()).or_default().push(p);
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionLine {
    image_id: String,
    class_id: i64,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
    confidence: f64,
}

/// Parses one JSONL line.
pub fn parse_prediction_line(line: &str) -> Result<(String, RawPrediction), PredictionError> {
    let raw: PredictionLine =
        serde_json::from_str(line).map_err(|e| PredictionError::MalformedLine(e.to_string()))?;
    let cls = CellClass::from_code(raw.class_id).map_err(|_| PredictionError::UnknownClassId(raw.class_id))?;
    if !(0.0..=1.0).contains(&raw.confidence) {
        return Err(PredictionError::ConfidenceOutOfRange(raw.confidence));
    }
    let bbox = BoundingBox::new(raw.x_min, raw.y_min, raw.x_max, raw.y_max)
        .map_err(|e| PredictionError::InvalidBox(e.to_string()))?;
    Ok((
        raw.image_id,
        RawPrediction {
            bbox,
            cls,
            confidence: raw.confidence,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct ParsedPredictions {
    pub set: PredictionSet,
    pub errors: Vec<LineError>,
}

/// Parses a JSONL stream. Lines are independent: a bad line is reported with
/// its 1-based number and does not affect the others. Blank lines are skipped.
pub fn parse_predictions(
    reader: impl BufRead,
    run_label: &str,
    post_nms: bool,
) -> Result<ParsedPredictions, PredictionError> {
    let mut set = PredictionSet::new(run_label);
    set.post_nms = post_nms;
    let mut errors = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| PredictionError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_prediction_line(&line) {
            Ok((image_id, p)) => set.push(&image_id, p),
            Err(e) => errors.push(LineError {
                line: i + 1,
                error: e.to_string(),
            }),
        }
    }
    Ok(ParsedPredictions { set, errors })
}

pub fn write_predictions_jsonl(set: &PredictionSet) -> String {
    let mut out = String::new();
    for (image_id, preds) in &set.by_image {
        for p in preds {
            let line = PredictionLine {
                image_id: image_id.clone(),
                class_id: i64::from(p.cls.code()),
                x_min: p.bbox.x_min(),
                y_min: p.bbox.y_min(),
                x_max: p.bbox.x_max(),
                y_max: p.bbox.y_max(),
                confidence: p.confidence,
            };
            out.push_str(&serde_json::to_string(&line).expect("prediction line serializes"));
            out.push('\n');
        }
    }
    out
}

/// Confidence filter followed by class-aware NMS, per image. Sets flagged
/// `post_nms` are only confidence-filtered.
pub fn postprocess(set: &PredictionSet, min_conf: f64, nms_thresh: f64) -> BTreeMap<String, Vec<Detection>> {
    set.by_image
        .par_iter()
        .map(|(image_id, preds)| {
            let dets: Vec<Detection> = preds.iter().map(|p| p.to_detection()).collect();
            let kept = filter_confidence(&dets, min_conf);
            let out = if set.post_nms { kept } else { nms(&kept, nms_thresh, true) };
            (image_id.clone(), out)
        })
        .collect()
}

/// Aspect-preserving resize into a square frame with centered padding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LetterboxSpec {
    pub src_width: u32,
    pub src_height: u32,
    pub target: u32,
    pub scale: f64,
    pub scaled_width: u32,
    pub scaled_height: u32,
    pub pad_left: u32,
    pub pad_top: u32,
    pub pad_fill: u8,
}

pub fn letterbox_map(width: u32, height: u32) -> LetterboxSpec {
    letterbox_map_with(width, height, LETTERBOX_TARGET, DEFAULT_PAD_FILL)
}

pub fn letterbox_map_with(width: u32, height: u32, target: u32, pad_fill: u8) -> LetterboxSpec {
    assert!(width > 0 && height > 0, "image dimensions must be positive");
    let t = f64::from(target);
    let scale = (t / f64::from(width)).min(t / f64::from(height));
    let scaled_width = ((f64::from(width) * scale).round() as u32).clamp(1, target);
    let scaled_height = ((f64::from(height) * scale).round() as u32).clamp(1, target);
    LetterboxSpec {
        src_width: width,
        src_height: height,
        target,
        scale,
        scaled_width,
        scaled_height,
        pad_left: (target - scaled_width) / 2,
        pad_top: (target - scaled_height) / 2,
        pad_fill,
    }
}

/// Maps a box from the original frame into the letterboxed frame.
pub fn letterbox_box(b: &BoundingBox, spec: &LetterboxSpec) -> BoundingBox {
    let (px, py) = (f64::from(spec.pad_left), f64::from(spec.pad_top));
    BoundingBox::new(
        b.x_min() * spec.scale + px,
        b.y_min() * spec.scale + py,
        b.x_max() * spec.scale + px,
        b.y_max() * spec.scale + py,
    )
    .expect("scaling preserves a valid box")
}

/// Maps a box from the letterboxed frame back to the original frame,
/// clamped to it. `None` when the box lies entirely in the padding.
pub fn unletterbox(b: &BoundingBox, spec: &LetterboxSpec) -> Option<BoundingBox> {
    let (px, py) = (f64::from(spec.pad_left), f64::from(spec.pad_top));
    let (w, h) = (f64::from(spec.src_width), f64::from(spec.src_height));
    let fx = |x: f64| ((x - px) / spec.scale).clamp(0.0, w);
    let fy = |y: f64| ((y - py) / spec.scale).clamp(0.0, h);
    BoundingBox::new(fx(b.x_min()), fy(b.y_min()), fx(b.x_max()), fy(b.y_max())).ok()
}

/// Produces the letterboxed raster the detector is assumed to consume.
pub fn letterbox_image(img: &RasterImage, spec: &LetterboxSpec) -> RasterImage {
    let resized = imageops::resize(
        &img.to_rgb_image(),
        spec.scaled_width,
        spec.scaled_height,
        FilterType::Triangle,
    );
    let fill = [spec.pad_fill; 3];
    let mut out = RasterImage::filled(spec.target, spec.target, fill).expect("positive target");
    for (x, y, p) in resized.enumerate_pixels() {
        out.set(x + spec.pad_left, y + spec.pad_top, p.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(image: &str, cls: i64, b: [f64; 4], conf: f64) -> String {
        format!(
            r#"{{"image_id":"{image}","class_id":{cls},"x_min":{},"y_min":{},"x_max":{},"y_max":{},"confidence":{conf}}}"#,
            b[0], b[1], b[2], b[3]
        )
    }

    #[test]
    fn empty_stream() {
        let parsed = parse_predictions("".as_bytes(), "run", false).unwrap();
        assert!(parsed.set.is_empty());
        assert!(parsed.errors.is_empty());
    }

    #[test]
    fn one_line_maps_verbatim() {
        let text = line("h01", 1, [10.5, 20.0, 31.0, 40.25], 0.91);
        let parsed = parse_predictions(text.as_bytes(), "nano", false).unwrap();
        let p = parsed.set.by_image["h01"][0];
        assert_eq!(p.bbox, BoundingBox::new(10.5, 20.0, 31.0, 40.25).unwrap());
        assert_eq!(p.cls, CellClass::Ki67Negative);
        assert_eq!(p.confidence, 0.91);
        assert_eq!(parsed.set.run_label, "nano");
    }

    #[test]
    fn bad_lines_are_isolated() {
        let text = [
            line("a", 0, [0.0, 0.0, 5.0, 5.0], 0.9),
            line("a", 0, [0.0, 0.0, 5.0, 5.0], 1.3),
            "{oops".to_string(),
            line("b", 3, [0.0, 0.0, 5.0, 5.0], 0.5),
            line("b", 1, [5.0, 0.0, 5.0, 5.0], 0.5),
            String::new(),
            line("b", 1, [0.0, 0.0, 5.0, 5.0], 0.5),
        ]
        .join("\n");
        let parsed = parse_predictions(text.as_bytes(), "r", false).unwrap();
        assert_eq!(parsed.set.len(), 2);
        let lines: Vec<usize> = parsed.errors.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![2, 3, 4, 5]);
        assert!(parsed.errors[0].error.contains("1.3"));
        assert!(parsed.errors[2].error.contains("unknown class id 3"));
    }

    #[test]
    fn jsonl_round_trip() {
        let text = [line("a", 0, [1.0, 2.0, 3.0, 4.0], 0.5), line("b", 1, [0.25, 0.5, 9.0, 9.5], 0.125)].join("\n");
        let parsed = parse_predictions(text.as_bytes(), "r", false).unwrap();
        let again = parse_predictions(write_predictions_jsonl(&parsed.set).as_bytes(), "r", false).unwrap();
        assert_eq!(again.set, parsed.set);
    }

    #[test]
    fn postprocess_suppresses_duplicates() {
        let b = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let mut set = PredictionSet::new("r");
        set.push("a", RawPrediction { bbox: b, cls: CellClass::Ki67Positive, confidence: 0.9 });
        set.push("a", RawPrediction { bbox: b, cls: CellClass::Ki67Positive, confidence: 0.8 });
        set.push("a", RawPrediction { bbox: b, cls: CellClass::Ki67Positive, confidence: 0.1 });
        let out = postprocess(&set, 0.25, DEFAULT_NMS_THRESHOLD);
        assert_eq!(out["a"].len(), 1);
        assert_eq!(out["a"][0].confidence, 0.9);

        set.post_nms = true;
        let out = postprocess(&set, 0.25, DEFAULT_NMS_THRESHOLD);
        let confs: Vec<f64> = out["a"].iter().map(|d| d.confidence).collect();
        assert_eq!(confs, vec![0.9, 0.8]);

        assert!(postprocess(&PredictionSet::new("e"), 0.0, 0.3).is_empty());
    }

    #[test]
    fn letterbox_examples() {
        let s = letterbox_map(640, 640);
        assert_eq!((s.scale, s.pad_left, s.pad_top), (1.0, 0, 0));
        let b = BoundingBox::new(3.0, 4.0, 100.0, 200.0).unwrap();
        assert_eq!(unletterbox(&b, &s), Some(b));

        let s = letterbox_map(1280, 640);
        assert_eq!((s.scale, s.pad_left, s.pad_top), (0.5, 0, 160));
        assert_eq!((s.scaled_width, s.scaled_height), (640, 320));

        let in_pad = BoundingBox::new(10.0, 0.0, 20.0, 100.0).unwrap();
        assert_eq!(unletterbox(&in_pad, &s), None);
    }

    #[test]
    fn letterbox_image_pads_with_fill() {
        let img = RasterImage::filled(64, 32, [200, 10, 10]).unwrap();
        let s = letterbox_map(64, 32);
        let out = letterbox_image(&img, &s);
        assert_eq!((out.width(), out.height()), (640, 640));
        assert_eq!(out.get(0, 0), [114, 114, 114]);
        assert_eq!(out.get(320, 320), [200, 10, 10]);
    }

    proptest! {
        #[test]
        fn letterbox_round_trip(w in 16u32..3000, h in 16u32..3000, fx in 0.0..0.9f64, fy in 0.0..0.9f64, fw in 0.01..0.1f64, fh in 0.01..0.1f64) {
            let (wf, hf) = (f64::from(w), f64::from(h));
            let b = BoundingBox::new(fx * wf, fy * hf, (fx + fw) * wf, (fy + fh) * hf).unwrap();
            let spec = letterbox_map(w, h);
            let back = unletterbox(&letterbox_box(&b, &spec), &spec).unwrap();
            prop_assert!((back.x_min() - b.x_min()).abs() <= 0.5);
            prop_assert!((back.y_min() - b.y_min()).abs() <= 0.5);
            prop_assert!((back.x_max() - b.x_max()).abs() <= 0.5);
            prop_assert!((back.y_max() - b.y_max()).abs() <= 0.5);
        }

        #[test]
        fn postprocess_never_invents(confs in prop::collection::vec((0.0..=1.0f64, 0.0..40.0f64, any::<bool>()), 0..20), min_conf in 0.0..1.0f64) {
            let mut set = PredictionSet::new("p");
            for (c, x, pos) in &confs {
                let cls = if *pos { CellClass::Ki67Positive } else { CellClass::Ki67Negative };
                set.push("img", RawPrediction { bbox: BoundingBox::new(*x, 0.0, x + 10.0, 10.0).unwrap(), cls, confidence: *c });
            }
            let input: Vec<Detection> = set.by_image.get("img").map(|v| v.iter().map(|p| p.to_detection()).collect()).unwrap_or_default();
            for d in postprocess(&set, min_conf, 0.3).values().flatten() {
                prop_assert!(input.contains(d));
                prop_assert!(d.confidence >= min_conf);
            }
        }
    }
}
