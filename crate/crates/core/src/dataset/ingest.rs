//! Builds a manifest from an image directory and a matching annotation directory.
//!
//! Images are PNG files. An image inside a subdirectory of the image root
//! belongs to the case named by that subdirectory; an image at the root is
//! its own case. The annotation for image `ID` is `ID.json` (rectangle JSON)
//! or `ID.txt` (YOLO) in the annotation directory.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::rect_json::{parse_rect_annotations, AnnotationError, LabelMap};
use super::yolo::{parse_yolo_file, YoloError};
use super::{AnnotationSet, DatasetManifest, ImageRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationFormat {
    RectJson,
    Yolo,
}

impl std::str::FromStr for AnnotationFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rect-json" => Ok(AnnotationFormat::RectJson),
            "yolo" => Ok(AnnotationFormat::Yolo),
            other => Err(format!("unknown annotation format '{other}' (expected rect-json or yolo)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: cannot read image: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("{path}: {source}")]
    Annotation { path: PathBuf, source: AnnotationError },
    #[error("{path}: {source}")]
    Yolo { path: PathBuf, source: YoloError },
    #[error("image id '{0}' occurs more than once")]
    DuplicateId(String),
}

#[derive(Debug)]
pub struct IngestOutput {
    pub manifest: DatasetManifest,
    pub warnings: Vec<String>,
}

fn png_files(dir: &Path) -> Result<Vec<(PathBuf, Option<String>)>, IngestError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| IngestError::Io { path, source }
    };
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io(dir))? {
        let path = entry.map_err(io(dir))?.path();
        if path.is_dir() {
            let case = path.file_name().map(|n| n.to_string_lossy().into_owned());
            for inner in fs::read_dir(&path).map_err(io(&path))? {
                let p = inner.map_err(io(&path))?.path();
                if is_png(&p) {
                    out.push((p, case.clone()));
                }
            }
        } else if is_png(&path) {
            out.push((path, None));
        }
    }
    out.sort();
    Ok(out)
}

fn is_png(p: &Path) -> bool {
    p.is_file()
        && p.extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

pub fn ingest_directory(
    images: &Path,
    annotations: &Path,
    format: AnnotationFormat,
    labels: &LabelMap,
) -> Result<IngestOutput, IngestError> {
    let mut manifest = DatasetManifest::default();
    let mut warnings = Vec::new();

    for (path, case) in png_files(images)? {
        let image_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if manifest.record(&image_id).is_some() {
            return Err(IngestError::DuplicateId(image_id));
        }
        let (width, height) = image::image_dimensions(&path).map_err(|source| IngestError::Image {
            path: path.clone(),
            source,
        })?;

        let ann_path = annotations.join(match format {
            AnnotationFormat::RectJson => format!("{image_id}.json"),
            AnnotationFormat::Yolo => format!("{image_id}.txt"),
        });
        let truths = if ann_path.exists() {
            let text = fs::read_to_string(&ann_path).map_err(|source| IngestError::Io {
                path: ann_path.clone(),
                source,
            })?;
            match format {
                AnnotationFormat::RectJson => {
                    let parsed = parse_rect_annotations(&text, labels).map_err(|source| {
                        IngestError::Annotation {
                            path: ann_path.clone(),
                            source,
                        }
                    })?;
                    if (parsed.width, parsed.height) != (width, height) {
                        warnings.push(format!(
                            "{image_id}: annotation declares {}x{} but image is {width}x{height}",
                            parsed.width, parsed.height
                        ));
                    }
                    warnings.extend(parsed.warnings);
                    parsed.annotations.truths
                }
                AnnotationFormat::Yolo => parse_yolo_file(&text, width, height).map_err(|source| {
                    IngestError::Yolo {
                        path: ann_path.clone(),
                        source,
                    }
                })?,
            }
        } else {
            warnings.push(format!("{image_id}: no annotation file {}", ann_path.display()));
            Vec::new()
        };

        manifest.annotations.insert(
            image_id.clone(),
            AnnotationSet {
                image_id: image_id.clone(),
                truths,
            },
        );
        manifest.records.push(ImageRecord {
            case_id: case.unwrap_or_else(|| image_id.clone()),
            image_id,
            width,
            height,
            source_path: path,
            parent_id: None,
            lineage: Vec::new(),
        });
    }

    Ok(IngestOutput { manifest, warnings })
}
