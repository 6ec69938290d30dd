use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::PathBuf;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{apply_chain, AugmentConfig, AugmentError, Transform, MAX_BRIGHTNESS_DELTA, MAX_CROP_FRACTION};
use crate::dataset::{AnnotationSet, DatasetManifest, ImageRecord};
use crate::raster::{RasterError, RasterImage};
use crate::rng::SeededRng;

/// Draw budget per chain before giving up on finding a new distinct chain.
const MAX_DRAWS_PER_CHAIN: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub source_id: String,
    pub transforms: Vec<Transform>,
    pub new_id: String,
}

/// Fully parameterized plan; executing it never draws random numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub seed: u64,
    pub target_total: usize,
    pub entries: Vec<PlanEntry>,
}

fn sample_chain(rng: &mut SeededRng) -> Vec<Transform> {
    loop {
        let mut chain = Vec::with_capacity(3);
        let geo = rng.below(Transform::GEOMETRIC.len() as u64 + 1) as usize;
        if geo > 0 {
            chain.push(Transform::GEOMETRIC[geo - 1]);
        }
        if rng.bernoulli(0.5) {
            chain.push(Transform::Crop {
                left: rng.uniform(0.0, MAX_CROP_FRACTION),
                top: rng.uniform(0.0, MAX_CROP_FRACTION),
                right: rng.uniform(0.0, MAX_CROP_FRACTION),
                bottom: rng.uniform(0.0, MAX_CROP_FRACTION),
            });
        }
        if rng.bernoulli(0.5) {
            chain.push(Transform::Brightness {
                delta: rng.uniform(-MAX_BRIGHTNESS_DELTA, MAX_BRIGHTNESS_DELTA),
            });
        }
        if !chain.is_empty() {
            return chain;
        }
    }
}

/// Samples distinct transform chains per base image until base images plus
/// plan entries reach `target_total`. Per-image chain counts differ by at
/// most one.
pub fn generate_plan(
    m: &DatasetManifest,
    seed: u64,
    target_total: usize,
) -> Result<AugmentPlan, AugmentError> {
    let mut base: Vec<&str> = m.base_records().map(|r| r.image_id.as_str()).collect();
    base.sort_unstable();
    if target_total < base.len() {
        return Err(AugmentError::TargetBelowBase {
            target: target_total,
            base: base.len(),
        });
    }
    let extra = target_total - base.len();
    if extra == 0 {
        return Ok(AugmentPlan {
            seed,
            target_total,
            entries: Vec::new(),
        });
    }

    let per_image = extra / base.len();
    let mut bonus_order = base.clone();
    SeededRng::derive(seed, "augment/balance").shuffle(&mut bonus_order);
    let bonus: BTreeSet<&str> = bonus_order[..extra % base.len()].iter().copied().collect();

    let existing_base: BTreeSet<&str> = base.iter().copied().collect();
    let mut entries = Vec::with_capacity(extra);
    for id in &base {
        let n = per_image + usize::from(bonus.contains(id));
        let mut rng = SeededRng::derive(seed, &format!("augment/{id}"));
        let mut chains: Vec<Vec<Transform>> = Vec::with_capacity(n);
        let mut draws = 0;
        while chains.len() < n {
            if draws >= MAX_DRAWS_PER_CHAIN * n {
                return Err(AugmentError::TargetTooLarge(id.to_string()));
            }
            draws += 1;
            let chain = sample_chain(&mut rng);
            if !chains.contains(&chain) {
                chains.push(chain);
            }
        }
        for (k, transforms) in chains.into_iter().enumerate() {
            let new_id = format!("{id}_aug{:03}", k + 1);
            if existing_base.contains(new_id.as_str()) {
                return Err(AugmentError::DuplicateId(new_id));
            }
            entries.push(PlanEntry {
                source_id: id.to_string(),
                transforms,
                new_id,
            });
        }
    }

    Ok(AugmentPlan {
        seed,
        target_total,
        entries,
    })
}

/// Where source rasters come from and where outputs go.
pub trait RasterStore: Sync {
    fn load(&self, record: &ImageRecord) -> Result<RasterImage, RasterError>;
    /// Persists an output raster and returns the path to record for it.
    fn save(&self, image_id: &str, img: &RasterImage) -> Result<PathBuf, RasterError>;
}

/// Reads PNGs from each record's `source_path`, writes `<out_dir>/<id>.png`.
pub struct PngDirStore {
    pub out_dir: PathBuf,
}

impl RasterStore for PngDirStore {
    fn load(&self, record: &ImageRecord) -> Result<RasterImage, RasterError> {
        RasterImage::load_png(&record.source_path)
    }

    fn save(&self, image_id: &str, img: &RasterImage) -> Result<PathBuf, RasterError> {
        fs::create_dir_all(&self.out_dir).map_err(image::ImageError::IoError)?;
        let path = self.out_dir.join(format!("{image_id}.png"));
        img.save_png(&path)?;
        Ok(path)
    }
}

/// In-memory store keyed by image id, for tests and examples.
#[derive(Default)]
pub struct MemoryStore {
    images: Mutex<BTreeMap<String, RasterImage>>,
}

impl MemoryStore {
    pub fn insert(&self, image_id: impl Into<String>, img: RasterImage) {
        self.images.lock().unwrap().insert(image_id.into(), img);
    }

    pub fn get(&self, image_id: &str) -> Option<RasterImage> {
        self.images.lock().unwrap().get(image_id).cloned()
    }
}

impl RasterStore for MemoryStore {
    fn load(&self, record: &ImageRecord) -> Result<RasterImage, RasterError> {
        self.get(&record.image_id).ok_or_else(|| {
            RasterError::Image(image::ImageError::IoError(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no raster for '{}'", record.image_id),
            )))
        })
    }

    fn save(&self, image_id: &str, img: &RasterImage) -> Result<PathBuf, RasterError> {
        self.insert(image_id, img.clone());
        Ok(PathBuf::from(format!("memory://{image_id}")))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExecuteOptions {
    pub overwrite: bool,
    pub config: AugmentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryFailure {
    pub new_id: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct ExecuteOutcome {
    pub manifest: DatasetManifest,
    pub failures: Vec<EntryFailure>,
}

/// Runs every plan entry (in parallel) and appends the successful outputs to
/// a copy of the manifest. Per-entry failures are collected, not fatal.
pub fn execute_plan(
    m: &DatasetManifest,
    plan: &AugmentPlan,
    store: &dyn RasterStore,
    opts: &ExecuteOptions,
) -> Result<ExecuteOutcome, AugmentError> {
    let mut new_ids = BTreeSet::new();
    for e in &plan.entries {
        if !new_ids.insert(e.new_id.as_str()) {
            return Err(AugmentError::DuplicateId(e.new_id.clone()));
        }
        for t in &e.transforms {
            t.validate()?;
        }
        match m.record(&e.new_id) {
            Some(existing) if !opts.overwrite || !existing.is_augmented() => {
                return Err(AugmentError::DuplicateId(e.new_id.clone()))
            }
            _ => {}
        }
        match m.record(&e.source_id) {
            Some(r) if !r.is_augmented() => {}
            _ => return Err(AugmentError::UnknownSource(e.source_id.clone())),
        }
    }

    let results: Vec<Result<(ImageRecord, AnnotationSet), EntryFailure>> = plan
        .entries
        .par_iter()
        .map(|e| {
            let fail = |err: AugmentError| EntryFailure {
                new_id: e.new_id.clone(),
                error: err.to_string(),
            };
            let source = m.record(&e.source_id).expect("checked above");
            let img = store.load(source).map_err(|err| fail(err.into()))?;
            let (out, truths) =
                apply_chain(&img, m.truths(&e.source_id), &e.transforms, &opts.config).map_err(fail)?;
            let path = store.save(&e.new_id, &out).map_err(|err| fail(err.into()))?;
            Ok((
                ImageRecord {
                    image_id: e.new_id.clone(),
                    case_id: source.case_id.clone(),
                    width: out.width(),
                    height: out.height(),
                    source_path: path,
                    parent_id: Some(e.source_id.clone()),
                    lineage: e.transforms.clone(),
                },
                AnnotationSet {
                    image_id: e.new_id.clone(),
                    truths,
                },
            ))
        })
        .collect();

    let mut manifest = m.clone();
    manifest.records.retain(|r| !new_ids.contains(r.image_id.as_str()));
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok((record, annotations)) => {
                let parent_split = record
                    .parent_id
                    .as_deref()
                    .and_then(|p| manifest.split_of(p));
                if let (Some(split), Some(s)) = (manifest.split.as_mut(), parent_split) {
                    split.insert(record.image_id.clone(), s);
                }
                manifest.annotations.insert(record.image_id.clone(), annotations);
                manifest.records.push(record);
            }
            Err(f) => {
                manifest.annotations.remove(&f.new_id);
                if let Some(split) = manifest.split.as_mut() {
                    split.remove(&f.new_id);
                }
                failures.push(f)
            }
        }
    }
    Ok(ExecuteOutcome { manifest, failures })
}
