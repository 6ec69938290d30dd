//! YOLO label text: one `class_id cx cy w h` line per box, normalized to the
//! image size, six decimals, newline-terminated.

use thiserror::Error;

use crate::detection::{BoundingBox, CellClass, GroundTruth};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum YoloError {
    #[error("malformed line: {0}")]
    MalformedLine(String),
    #[error("normalized value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("unknown class id {0}")]
    UnknownClassId(i64),
    #[error("box has zero area")]
    DegenerateBox,
    #[error("line {line}: {source}")]
    AtLine { line: usize, source: Box<YoloError> },
}

pub fn parse_yolo_line(line: &str, width: u32, height: u32) -> Result<GroundTruth, YoloError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(YoloError::MalformedLine(format!(
            "expected 5 fields, got {}",
            fields.len()
        )));
    }
    let class_id: i64 = fields[0]
        .parse()
        .map_err(|_| YoloError::MalformedLine(format!("bad class id '{}'", fields[0])))?;
    let mut vals = [0.0f64; 4];
    for (v, f) in vals.iter_mut().zip(&fields[1..]) {
        *v = f
            .parse()
            .map_err(|_| YoloError::MalformedLine(format!("bad number '{f}'")))?;
        if !(0.0..=1.0).contains(v) {
            return Err(YoloError::OutOfRange(*v));
        }
    }
    let cls = CellClass::from_code(class_id).map_err(|_| YoloError::UnknownClassId(class_id))?;

    let [cx, cy, bw, bh] = vals;
    let (w, h) = (f64::from(width), f64::from(height));
    let clamp_x = |v: f64| v.clamp(0.0, w);
    let clamp_y = |v: f64| v.clamp(0.0, h);
    let bbox = BoundingBox::new(
        clamp_x((cx - bw / 2.0) * w),
        clamp_y((cy - bh / 2.0) * h),
        clamp_x((cx + bw / 2.0) * w),
        clamp_y((cy + bh / 2.0) * h),
    )
    .map_err(|_| YoloError::DegenerateBox)?;
    Ok(GroundTruth::new(bbox, cls))
}

/// Inverse of [`parse_yolo_line`], without the trailing newline.
pub fn export_yolo_line(t: &GroundTruth, width: u32, height: u32) -> Result<String, YoloError> {
    let (w, h) = (f64::from(width), f64::from(height));
    let (cx, cy) = t.bbox.center();
    let vals = [cx / w, cy / h, t.bbox.width() / w, t.bbox.height() / h];
    if let Some(bad) = vals.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(YoloError::OutOfRange(*bad));
    }
    if !t.bbox.fits_within(w, h) {
        let over = (t.bbox.x_max() / w).max(t.bbox.y_max() / h);
        return Err(YoloError::OutOfRange(over));
    }
    Ok(format!(
        "{} {:.6} {:.6} {:.6} {:.6}",
        t.cls.code(),
        vals[0],
        vals[1],
        vals[2],
        vals[3]
    ))
}

/// Parses a whole label file; blank lines are ignored.
pub fn parse_yolo_file(text: &str, width: u32, height: u32) -> Result<Vec<GroundTruth>, YoloError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_yolo_line(l, width, height).map_err(|e| YoloError::AtLine {
                line: i + 1,
                source: Box::new(e),
            })
        })
        .collect()
}

pub fn export_yolo_file(truths: &[GroundTruth], width: u32, height: u32) -> Result<String, YoloError> {
    let mut out = String::new();
    for t in truths {
        out.push_str(&export_yolo_line(t, width, height)?);
        out.push('\n');
    }
    Ok(out)
}
