//! Overlay rendering and case reports.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::detection::{CellClass, Detection};
use crate::eval::EvaluationReport;
use crate::raster::{RasterImage, Rgb};
use crate::scoring::{Aggregation, CaseScore, MIN_ADEQUATE_CELLS};

pub const CASE_REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverlayStyle {
    pub positive: Rgb,
    pub negative: Rgb,
    pub stroke: u32,
    pub show_confidence: bool,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self {
            positive: [255, 0, 0],
            negative: [0, 255, 0],
            stroke: 2,
            show_confidence: false,
        }
    }
}

impl OverlayStyle {
    pub fn color(&self, cls: CellClass) -> Rgb {
        match cls {
            CellClass::Ki67Positive => self.positive,
            CellClass::Ki67Negative => self.negative,
        }
    }
}

/// Inclusive pixel span covered by `[lo, hi)` in a frame of `n` pixels.
fn pixel_span(lo: f64, hi: f64, n: u32) -> Option<(u32, u32)> {
    let first = lo.floor().max(0.0);
    let last = (hi.ceil() - 1.0).min(f64::from(n) - 1.0);
    (first <= last).then_some((first as u32, last as u32))
}

// 3x5 glyphs, one row per entry, bit 2 = left column.
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b001, 0b001, 0b001],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        _ => return None,
    })
}

fn draw_text(img: &mut RasterImage, text: &str, x: u32, y: u32, color: Rgb) {
    for (i, c) in text.chars().enumerate() {
        let Some(rows) = glyph(c) else { continue };
        let gx = x + 4 * i as u32;
        for (dy, row) in rows.iter().enumerate() {
            for dx in 0..3u32 {
                if row & (0b100 >> dx) != 0 {
                    let (px, py) = (gx + dx, y + dy as u32);
                    if px < img.width() && py < img.height() {
                        img.set(px, py, color);
                    }
                }
            }
        }
    }
}

/// Draws rectangle outlines (no fill, no anti-aliasing) in class colors,
/// in input order, so later detections paint over earlier ones. The stroke
/// lies inside the box's pixel footprint. Boxes reaching outside the image
/// are clamped to it.
pub fn render_overlay(img: &RasterImage, dets: &[Detection], style: &OverlayStyle) -> RasterImage {
    let mut out = img.clone();
    let s = style.stroke.max(1);
    for d in dets {
        if !d.bbox.fits_within(f64::from(img.width()), f64::from(img.height())) {
            log::warn!("detection {} extends past the {}x{} image, clamped", d.bbox, img.width(), img.height());
        }
        let (Some((x0, x1)), Some((y0, y1))) = (
            pixel_span(d.bbox.x_min(), d.bbox.x_max(), img.width()),
            pixel_span(d.bbox.y_min(), d.bbox.y_max(), img.height()),
        ) else {
            continue;
        };
        let color = style.color(d.cls);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let on_ring = x < x0 + s || x + s > x1 || y < y0 + s || y + s > y1;
                if on_ring {
                    out.set(x, y, color);
                }
            }
        }
        if style.show_confidence {
            let label = format!("{:.2}", d.confidence);
            let ty = if y0 >= 7 { y0 - 7 } else { y0 + s + 1 };
            draw_text(&mut out, &label, x0, ty, color);
        }
    }
    out
}

/// Machine-readable case report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReportDoc {
    pub schema_version: u32,
    pub case: CaseScore,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<EvaluationReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub json: String,
    pub text: String,
}

/// JSON for one case score, exactly as the batch scorer and the review
/// service emit it.
pub fn case_score_json(score: &CaseScore) -> String {
    let mut s = serde_json::to_string_pretty(score).expect("case score serializes");
    s.push('\n');
    s
}

pub fn emit_case_report(score: &CaseScore, evaluation: Option<&EvaluationReport>) -> CaseReport {
    let doc = CaseReportDoc {
        schema_version: CASE_REPORT_SCHEMA_VERSION,
        case: score.clone(),
        evaluation: evaluation.cloned(),
    };
    let mut json = serde_json::to_string_pretty(&doc).expect("case report serializes");
    json.push('\n');

    let mut t = String::new();
    let _ = writeln!(t, "Case: {}", score.case_id);
    let mode = match score.config.aggregation {
        Aggregation::Pooled => "pooled",
        Aggregation::MeanOfHotspots => "mean of hotspots",
    };
    let _ = writeln!(t, "Ki-67 index: {:.2}% ({mode})", score.index_percent);
    let _ = writeln!(t, "Clinical band: {}", score.band);
    let _ = writeln!(
        t,
        "Cells counted: {} ({} positive, {} negative)",
        score.total_cells, score.pooled_pos, score.pooled_neg
    );
    if score.adequate {
        let _ = writeln!(t, "Adequacy: adequate (>= {MIN_ADEQUATE_CELLS} cells)");
    } else {
        let _ = writeln!(t, "Adequacy: inadequate (< {MIN_ADEQUATE_CELLS} cells)");
    }
    let _ = writeln!(
        t,
        "Configuration: min_conf={} nms_threshold={} aggregation={}",
        score.config.min_conf,
        score.config.nms_threshold,
        serde_json::to_value(score.config.aggregation)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default()
    );
    let _ = writeln!(t, "Hotspots:");
    let width = score.hotspots.iter().map(|h| h.image_id.len()).max().unwrap_or(0);
    for h in &score.hotspots {
        let _ = writeln!(
            t,
            "  {:<width$}  pos {:>5}  neg {:>5}  index {:>6.2}%",
            h.image_id, h.n_pos, h.n_neg, h.index_percent
        );
    }
    if !score.excluded_images.is_empty() {
        let _ = writeln!(t, "Excluded (no cells detected): {}", score.excluded_images.join(", "));
    }
    if let Some(e) = evaluation {
        let _ = writeln!(t, "Evaluation ({}): mAP50 {:.4} over {} images", e.run_label, e.map50, e.image_count);
        for c in &e.classes {
            let ap = c.ap50.map_or("-".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                t,
                "  {:<14} AP50 {ap}  precision {:.4}  recall {:.4}",
                c.class_name, c.precision, c.recall
            );
        }
    }
    CaseReport { json, text: t }
}

pub fn parse_case_report(json: &str) -> Result<CaseReportDoc, serde_json::Error> {
    serde_json::from_str(json)
}
