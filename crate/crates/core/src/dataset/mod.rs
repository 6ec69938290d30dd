//! Image records, annotations and the persisted dataset manifest.

mod ingest;
pub mod rect_json;
mod split;
mod validate;
pub mod yolo;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::Transform;
use crate::detection::{CellClass, GroundTruth};

pub use ingest::{ingest_directory, AnnotationFormat, IngestError, IngestOutput};
pub use rect_json::{parse_rect_annotations, AnnotationError, LabelMap, RectDocument};
pub use split::{split_dataset, Allocation, SplitError, SplitSpec};
pub use validate::{validate_manifest, Finding, Severity};
pub use yolo::{export_yolo_line, parse_yolo_line, YoloError};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub case_id: String,
    pub width: u32,
    pub height: u32,
    pub source_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    /// Transform chain that produced this record from `parent_id`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lineage: Vec<Transform>,
}

impl ImageRecord {
    pub fn is_augmented(&self) -> bool {
        self.parent_id.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub image_id: String,
    pub truths: Vec<GroundTruth>,
}

impl AnnotationSet {
    pub fn empty(image_id: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            truths: Vec::new(),
        }
    }

    pub fn count(&self, cls: CellClass) -> usize {
        self.truths.iter().filter(|t| t.cls == cls).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}' (expected train, val or test)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("failed to read or write manifest {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest {path} is not valid JSON: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("unsupported manifest schema_version {0} (expected {MANIFEST_SCHEMA_VERSION})")]
    SchemaVersion(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub records: Vec<ImageRecord>,
    pub annotations: BTreeMap<String, AnnotationSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<BTreeMap<String, Split>>,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            records: Vec::new(),
            annotations: BTreeMap::new(),
            split: None,
        }
    }
}

impl DatasetManifest {
    pub fn record(&self, image_id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }

    pub fn truths(&self, image_id: &str) -> &[GroundTruth] {
        self.annotations
            .get(image_id)
            .map(|a| a.truths.as_slice())
            .unwrap_or(&[])
    }

    pub fn base_records(&self) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(|r| !r.is_augmented())
    }

    pub fn case_ids(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.case_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Records of a case in manifest order.
    pub fn case_records(&self, case_id: &str) -> Vec<&ImageRecord> {
        self.records.iter().filter(|r| r.case_id == case_id).collect()
    }

    pub fn split_of(&self, image_id: &str) -> Option<Split> {
        self.split.as_ref().and_then(|s| s.get(image_id).copied())
    }

    /// Records assigned to `split`, or every record when `split` is `None`.
    pub fn subset(&self, split: Option<Split>) -> Vec<&ImageRecord> {
        self.records
            .iter()
            .filter(|r| split.is_none() || self.split_of(&r.image_id) == split)
            .collect()
    }

    pub fn split_sizes(&self) -> BTreeMap<Split, usize> {
        let mut sizes = BTreeMap::new();
        if let Some(split) = &self.split {
            for s in split.values() {
                *sizes.entry(*s).or_insert(0) += 1;
            }
        }
        sizes
    }

    /// Reads a manifest and resolves relative `source_path`s against the
    /// manifest's directory.
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|source| ManifestError::Json {
                path: path.to_path_buf(),
                source,
            })?;
        if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(ManifestError::SchemaVersion(manifest.schema_version));
        }
        let base = path.parent().unwrap_or(Path::new(""));
        for r in &mut manifest.records {
            if r.source_path.is_relative() {
                r.source_path = base.join(&r.source_path);
            }
        }
        Ok(manifest)
    }

    /// Writes the manifest; source paths under the manifest's directory are
    /// stored relative to it.
    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut out = self.clone();
        for r in &mut out.records {
            if let Ok(rel) = r.source_path.strip_prefix(base) {
                if !base.as_os_str().is_empty() {
                    r.source_path = rel.to_path_buf();
                }
            }
        }
        let io_err = |source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        };
        if !base.as_os_str().is_empty() {
            fs::create_dir_all(base).map_err(io_err)?;
        }
        let mut text = serde_json::to_string_pretty(&out).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(io_err)
    }
}
