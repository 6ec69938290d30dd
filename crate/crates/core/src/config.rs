//! Pipeline settings read from a TOML file. Command-line flags override
//! values from the file.
//!
//! ```toml
//! min_conf = 0.25          # required for scoring; no default
//! nms_threshold = 0.3
//! iou_threshold = 0.5
//! aggregation = "pooled"   # or "mean_of_hotspots"
//! seed = 0
//! crop_retention = 0.3
//! brightness_mode = "multiplicative"   # or "additive"
//! pad_fill = 114
//!
//! [overlay]
//! positive = [255, 0, 0]
//! negative = [0, 255, 0]
//! stroke = 2
//! show_confidence = false
//!
//! [labels]
//! ki67_positive = 0
//! ki67_negative = 1
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{AugmentConfig, BrightnessMode, DEFAULT_CROP_RETENTION};
use crate::dataset::LabelMap;
use crate::predictions::{DEFAULT_NMS_THRESHOLD, DEFAULT_PAD_FILL};
use crate::reporting::OverlayStyle;
use crate::scoring::{Aggregation, ScoringConfig};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("{key} = {value} is outside [0, 1]")]
    OutOfRange { key: &'static str, value: f64 },
    #[error("min_conf is required for scoring: set it in the config file or pass --min-conf")]
    MissingMinConf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_conf: Option<f64>,
    pub nms_threshold: f64,
    pub iou_threshold: f64,
    pub aggregation: Aggregation,
    pub seed: u64,
    pub crop_retention: f64,
    pub brightness_mode: BrightnessMode,
    pub pad_fill: u8,
    pub overlay: OverlayStyle,
    pub labels: LabelMap,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            min_conf: None,
            nms_threshold: DEFAULT_NMS_THRESHOLD,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            aggregation: Aggregation::Pooled,
            seed: 0,
            crop_retention: DEFAULT_CROP_RETENTION,
            brightness_mode: BrightnessMode::Multiplicative,
            pad_fill: DEFAULT_PAD_FILL,
            overlay: OverlayStyle::default(),
            labels: LabelMap::default(),
        }
    }
}

impl Settings {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let s: Settings = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_path_buf(),
            source,
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    /// The file's settings, or the defaults when no file is given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, ConfigError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let unit = [
            ("min_conf", self.min_conf.unwrap_or(0.0)),
            ("nms_threshold", self.nms_threshold),
            ("iou_threshold", self.iou_threshold),
            ("crop_retention", self.crop_retention),
        ];
        for (key, value) in unit {
            if !(0.0..=1.0).contains(&value) {
                return Err(ConfigError::OutOfRange { key, value });
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings serialize")
    }

    pub fn scoring(&self) -> Result<ScoringConfig, ConfigError> {
        Ok(ScoringConfig {
            min_conf: self.min_conf.ok_or(ConfigError::MissingMinConf)?,
            nms_threshold: self.nms_threshold,
            aggregation: self.aggregation,
        })
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            crop_retention: self.crop_retention,
            brightness_mode: self.brightness_mode,
        }
    }
}
