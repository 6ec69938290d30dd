//! Annotation-preserving augmentation.
//!
//! Geometric transforms are pixel-index permutations and map boxes exactly
//! through the matching continuous point map. Crops remove whole-pixel
//! margins and drop boxes that lose too much area; brightness touches pixels
//! only.

mod plan;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{BoundingBox, GroundTruth};
use crate::raster::{RasterError, RasterImage};

pub use plan::{
    execute_plan, generate_plan, AugmentPlan, EntryFailure, ExecuteOptions, ExecuteOutcome,
    MemoryStore, PlanEntry, PngDirStore, RasterStore,
};

pub const MAX_CROP_FRACTION: f64 = 0.08;
pub const MAX_BRIGHTNESS_DELTA: f64 = 0.24;
pub const DEFAULT_CROP_RETENTION: f64 = 0.30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Transform {
    HFlip,
    VFlip,
    Rot90Cw,
    Rot90Ccw,
    Rot180,
    /// Per-side margins as fractions of the image width (left, right) or
    /// height (top, bottom).
    Crop {
        left: f64,
        top: f64,
        right: f64,
        bottom: f64,
    },
    Brightness {
        delta: f64,
    },
}

impl Transform {
    pub const GEOMETRIC: [Transform; 5] = [
        Transform::HFlip,
        Transform::VFlip,
        Transform::Rot90Cw,
        Transform::Rot90Ccw,
        Transform::Rot180,
    ];

    pub fn validate(&self) -> Result<(), AugmentError> {
        match *self {
            Transform::Crop {
                left,
                top,
                right,
                bottom,
            } => {
                for f in [left, top, right, bottom] {
                    if !(0.0..=MAX_CROP_FRACTION).contains(&f) {
                        return Err(AugmentError::InvalidParameter(format!(
                            "crop fraction {f} outside [0, {MAX_CROP_FRACTION}]"
                        )));
                    }
                }
                Ok(())
            }
            Transform::Brightness { delta } => {
                if !(-MAX_BRIGHTNESS_DELTA..=MAX_BRIGHTNESS_DELTA).contains(&delta) {
                    return Err(AugmentError::InvalidParameter(format!(
                        "brightness delta {delta} outside [-{MAX_BRIGHTNESS_DELTA}, {MAX_BRIGHTNESS_DELTA}]"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BrightnessMode {
    /// `channel * (1 + delta)`
    #[default]
    Multiplicative,
    /// `channel + 255 * delta`
    Additive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Minimum fraction of a box's area that must survive a crop.
    pub crop_retention: f64,
    pub brightness_mode: BrightnessMode,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop_retention: DEFAULT_CROP_RETENTION,
            brightness_mode: BrightnessMode::Multiplicative,
        }
    }
}

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid transform parameter: {0}")]
    InvalidParameter(String),
    #[error("crop leaves an empty {0}x{1} image")]
    EmptyResult(i64, i64),
    #[error("augmentation target {target} is below the {base} base images")]
    TargetBelowBase { target: usize, base: usize },
    #[error("could not find enough distinct transform chains for '{0}'")]
    TargetTooLarge(String),
    #[error("image id '{0}' already exists in the manifest")]
    DuplicateId(String),
    #[error("source image '{0}' not found in the manifest")]
    UnknownSource(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

fn map_box(b: &BoundingBox, f: impl Fn(f64, f64) -> (f64, f64)) -> BoundingBox {
    BoundingBox::from_corners(f(b.x_min(), b.y_min()), f(b.x_max(), b.y_max()))
        .expect("geometric transforms preserve box extent")
}

fn map_truths(truths: &[GroundTruth], f: impl Fn(f64, f64) -> (f64, f64)) -> Vec<GroundTruth> {
    truths
        .iter()
        .map(|t| GroundTruth::new(map_box(&t.bbox, &f), t.cls))
        .collect()
}

fn adjust_channel(c: u8, delta: f64, mode: BrightnessMode) -> u8 {
    let v = match mode {
        BrightnessMode::Multiplicative => f64::from(c) * (1.0 + delta),
        BrightnessMode::Additive => f64::from(c) + 255.0 * delta,
    };
    v.round().clamp(0.0, 255.0) as u8
}

/// Applies one transform to an image and its ground truths.
pub fn apply_transform(
    img: &RasterImage,
    truths: &[GroundTruth],
    t: &Transform,
    config: &AugmentConfig,
) -> Result<(RasterImage, Vec<GroundTruth>), AugmentError> {
    t.validate()?;
    let (w, h) = (img.width(), img.height());
    let (wf, hf) = (f64::from(w), f64::from(h));

    let out = match *t {
        Transform::HFlip => (
            img.remap(w, h, |x, y| (w - 1 - x, y))?,
            map_truths(truths, |x, y| (wf - x, y)),
        ),
        Transform::VFlip => (
            img.remap(w, h, |x, y| (x, h - 1 - y))?,
            map_truths(truths, |x, y| (x, hf - y)),
        ),
        Transform::Rot180 => (
            img.remap(w, h, |x, y| (w - 1 - x, h - 1 - y))?,
            map_truths(truths, |x, y| (wf - x, hf - y)),
        ),
        // source (x, y) lands at (h - 1 - y, x)
        Transform::Rot90Cw => (
            img.remap(h, w, |x, y| (y, h - 1 - x))?,
            map_truths(truths, |x, y| (hf - y, x)),
        ),
        // source (x, y) lands at (y, w - 1 - x)
        Transform::Rot90Ccw => (
            img.remap(h, w, |x, y| (w - 1 - y, x))?,
            map_truths(truths, |x, y| (y, wf - x)),
        ),
        Transform::Crop {
            left,
            top,
            right,
            bottom,
        } => {
            let l = (left * wf).round() as i64;
            let r = (right * wf).round() as i64;
            let tp = (top * hf).round() as i64;
            let b = (bottom * hf).round() as i64;
            let new_w = i64::from(w) - l - r;
            let new_h = i64::from(h) - tp - b;
            if new_w <= 0 || new_h <= 0 {
                return Err(AugmentError::EmptyResult(new_w, new_h));
            }
            let (new_w, new_h) = (new_w as u32, new_h as u32);
            let (l, tp) = (l as u32, tp as u32);
            let image = img.remap(new_w, new_h, |x, y| (x + l, y + tp))?;

            let (dx, dy) = (f64::from(l), f64::from(tp));
            let kept = truths
                .iter()
                .filter_map(|t| {
                    let x0 = (t.bbox.x_min() - dx).max(0.0);
                    let y0 = (t.bbox.y_min() - dy).max(0.0);
                    let x1 = (t.bbox.x_max() - dx).min(f64::from(new_w));
                    let y1 = (t.bbox.y_max() - dy).min(f64::from(new_h));
                    let clipped = BoundingBox::new(x0, y0, x1, y1).ok()?;
                    (clipped.area() >= config.crop_retention * t.bbox.area())
                        .then(|| GroundTruth::new(clipped, t.cls))
                })
                .collect();
            (image, kept)
        }
        Transform::Brightness { delta } => (
            img.map_pixels(|p| p.map(|c| adjust_channel(c, delta, config.brightness_mode))),
            truths.to_vec(),
        ),
    };
    Ok(out)
}

/// Applies a chain of transforms left to right.
pub fn apply_chain(
    img: &RasterImage,
    truths: &[GroundTruth],
    chain: &[Transform],
    config: &AugmentConfig,
) -> Result<(RasterImage, Vec<GroundTruth>), AugmentError> {
    let mut cur = (img.clone(), truths.to_vec());
    for t in chain {
        cur = apply_transform(&cur.0, &cur.1, t, config)?;
    }
    Ok(cur)
}
