//! Synthetic desk-scale dataset with known truths.
//!
//! Layout under the output directory:
//!
//! ```text
//! images/{case}/{id}.png      640x640 hotspot images, cells drawn as disks
//! annotations/{id}.json       rectangle JSON truths
//! labels/{id}.txt             the same truths in YOLO format
//! manifest.json               ingested from images/ + annotations/
//! pool_1863.json              flat 1863-record manifest for split checks
//! predictions/perfect.jsonl   every truth, plus near-duplicates that NMS removes
//! predictions/corrupted.jsonl exactly 20% of truths per class and image missing
//! predictions/{nano,small,medium}.jsonl   noisy detectors of increasing quality
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::dataset::{
    ingest_directory, AnnotationFormat, AnnotationSet, DatasetManifest, ImageRecord, IngestError, LabelMap,
    ManifestError, RectDocument,
};
use crate::dataset::yolo::export_yolo_file;
use crate::detection::{BoundingBox, CellClass, GroundTruth};
use crate::predictions::{write_predictions_jsonl, PredictionSet, RawPrediction};
use crate::raster::{RasterError, RasterImage, Rgb};
use crate::rng::SeededRng;

pub const FIXTURE_SIZE: u32 = 640;
pub const POOL_SIZE: usize = 1863;
const PITCH: u32 = 24;
const MARGIN: u32 = 8;
const GRID: u32 = 26;

/// (positive, negative) truth counts per image. All multiples of five.
pub const CASES: [(&str, [(usize, usize); 6]); 2] = [
    ("case_a", [(70, 20), (65, 25), (75, 15), (60, 30), (70, 20), (65, 25)]),
    ("case_b", [(10, 60), (15, 55), (5, 65), (10, 60), (15, 55), (5, 65)]),
];

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

/// Noise model of a synthetic detector.
#[derive(Debug, Clone, Copy)]
struct Variant {
    name: &'static str,
    detect: f64,
    jitter: f64,
    flip: f64,
    false_positives: usize,
}

const VARIANTS: [Variant; 3] = [
    Variant { name: "nano", detect: 0.80, jitter: 2.0, flip: 0.08, false_positives: 6 },
    Variant { name: "small", detect: 0.88, jitter: 1.5, flip: 0.05, false_positives: 4 },
    Variant { name: "medium", detect: 0.94, jitter: 1.0, flip: 0.03, false_positives: 2 },
];

#[derive(Debug, Clone, Serialize)]
pub struct FixtureSummary {
    pub root: PathBuf,
    pub manifest: PathBuf,
    pub pool_manifest: PathBuf,
    pub predictions: Vec<PathBuf>,
    pub images: usize,
    pub positive_truths: usize,
    pub negative_truths: usize,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FixtureError + '_ {
    move |source| FixtureError::Io { path: path.to_path_buf(), source }
}

fn write(path: &Path, text: &str) -> Result<(), FixtureError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

/// Places `n_pos + n_neg` disjoint cells on a jittered grid and draws them.
pub fn synth_image(rng: &mut SeededRng, n_pos: usize, n_neg: usize) -> (RasterImage, Vec<GroundTruth>) {
    let mut slots: Vec<u32> = (0..GRID * GRID).collect();
    rng.shuffle(&mut slots);
    let mut truths = Vec::with_capacity(n_pos + n_neg);
    let mut disks = Vec::new();
    for (i, slot) in slots.into_iter().take(n_pos + n_neg).enumerate() {
        let cls = if i < n_pos { CellClass::Ki67Positive } else { CellClass::Ki67Negative };
        let (gx, gy) = (slot % GRID, slot / GRID);
        let r = 5 + rng.below(4) as i64;
        let cx = i64::from(MARGIN + gx * PITCH) + 12 + rng.below(5) as i64 - 2;
        let cy = i64::from(MARGIN + gy * PITCH) + 12 + rng.below(5) as i64 - 2;
        let bbox = BoundingBox::new((cx - r) as f64, (cy - r) as f64, (cx + r) as f64, (cy + r) as f64)
            .expect("grid keeps cells inside the frame");
        let color: Rgb = match cls {
            CellClass::Ki67Positive => [139 + rng.below(20) as u8, 90, 43],
            CellClass::Ki67Negative => [70, 90 + rng.below(20) as u8, 180],
        };
        truths.push(GroundTruth { bbox, cls });
        disks.push((cx as f64, cy as f64, r as f64, color));
    }

    let mut pixels = Vec::with_capacity((FIXTURE_SIZE * FIXTURE_SIZE) as usize);
    for _ in 0..FIXTURE_SIZE * FIXTURE_SIZE {
        let n = rng.below(12) as u8;
        pixels.push([228 + n, 220 + n, 226 + n]);
    }
    let mut img = RasterImage::new(FIXTURE_SIZE, FIXTURE_SIZE, pixels).expect("fixed size");
    for (cx, cy, r, color) in disks {
        let (x0, y0) = ((cx - r) as u32, (cy - r) as u32);
        for y in y0..(cy + r) as u32 {
            for x in x0..(cx + r) as u32 {
                let (dx, dy) = (f64::from(x) + 0.5 - cx, f64::from(y) + 0.5 - cy);
                if dx * dx + dy * dy <= r * r {
                    img.set(x, y, color);
                }
            }
        }
    }
    (img, truths)
}

fn perfect(rng: &mut SeededRng, image_id: &str, truths: &[GroundTruth], set: &mut PredictionSet) {
    for (i, t) in truths.iter().enumerate() {
        let confidence = rng.uniform(0.6, 0.99);
        set.push(image_id, RawPrediction { bbox: t.bbox, cls: t.cls, confidence });
        if i % 4 == 0 {
            let b = &t.bbox;
            let shifted = BoundingBox::new(b.x_min() + 1.0, b.y_min(), b.x_max() + 1.0, b.y_max()).expect("shift keeps box valid");
            set.push(image_id, RawPrediction { bbox: shifted, cls: t.cls, confidence: confidence - 0.3 });
        }
    }
}

fn corrupted(rng: &mut SeededRng, image_id: &str, truths: &[GroundTruth], set: &mut PredictionSet) {
    for cls in CellClass::ALL {
        let mut idx: Vec<usize> = (0..truths.len()).filter(|&i| truths[i].cls == cls).collect();
        rng.shuffle(&mut idx);
        let keep = idx.len() - idx.len() / 5;
        idx.truncate(keep);
        idx.sort_unstable();
        for i in idx {
            let confidence = rng.uniform(0.5, 0.99);
            set.push(image_id, RawPrediction { bbox: truths[i].bbox, cls, confidence });
        }
    }
}

fn noisy(rng: &mut SeededRng, v: &Variant, image_id: &str, truths: &[GroundTruth], set: &mut PredictionSet) {
    let size = f64::from(FIXTURE_SIZE);
    for t in truths {
        if !rng.bernoulli(v.detect) {
            continue;
        }
        let mut j = || rng.uniform(-v.jitter, v.jitter);
        let b = &t.bbox;
        let (x0, y0) = ((b.x_min() + j()).max(0.0), (b.y_min() + j()).max(0.0));
        let (x1, y1) = ((b.x_max() + j()).min(size), (b.y_max() + j()).min(size));
        let Ok(bbox) = BoundingBox::new(x0, y0, x1, y1) else { continue };
        let cls = if rng.bernoulli(v.flip) { t.cls.toggled() } else { t.cls };
        let confidence = rng.uniform(0.45, 0.98);
        set.push(image_id, RawPrediction { bbox, cls, confidence });
    }
    for _ in 0..v.false_positives {
        let (x, y) = (rng.uniform(0.0, size - 14.0), rng.uniform(0.0, size - 14.0));
        let bbox = BoundingBox::new(x, y, x + 12.0, y + 12.0).expect("inside frame");
        let cls = if rng.bernoulli(0.5) { CellClass::Ki67Positive } else { CellClass::Ki67Negative };
        set.push(image_id, RawPrediction { bbox, cls, confidence: rng.uniform(0.05, 0.6) });
    }
}

/// Flat manifest of `POOL_SIZE` records with no lineage, one per case. The
/// records point at files that are never written; only split logic reads it.
pub fn pool_manifest() -> DatasetManifest {
    let mut m = DatasetManifest::default();
    for i in 0..POOL_SIZE {
        let id = format!("pool_{i:04}");
        let bbox = BoundingBox::new(10.0, 10.0, 20.0, 20.0).expect("valid");
        m.annotations.insert(
            id.clone(),
            AnnotationSet { image_id: id.clone(), truths: vec![GroundTruth { bbox, cls: CellClass::Ki67Positive }] },
        );
        m.records.push(ImageRecord {
            image_id: id.clone(),
            case_id: id.clone(),
            width: FIXTURE_SIZE,
            height: FIXTURE_SIZE,
            source_path: PathBuf::from(format!("pool/{id}.png")),
            parent_id: None,
            lineage: Vec::new(),
        });
    }
    m
}

/// Writes the fixture under `out`. Output depends only on `seed`.
pub fn generate_fixture(out: &Path, seed: u64) -> Result<FixtureSummary, FixtureError> {
    let labels = LabelMap::default();
    let mut perfect_set = PredictionSet::new("perfect");
    let mut corrupted_set = PredictionSet::new("corrupted");
    let mut variant_sets: Vec<PredictionSet> = VARIANTS.iter().map(|v| PredictionSet::new(v.name)).collect();
    let (mut n_pos_total, mut n_neg_total, mut images) = (0, 0, 0);

    for (case_id, counts) in CASES {
        for (k, &(n_pos, n_neg)) in counts.iter().enumerate() {
            let image_id = format!("{case_id}_h{:02}", k + 1);
            let mut rng = SeededRng::derive(seed, &format!("fixture/{image_id}"));
            let (img, truths) = synth_image(&mut rng, n_pos, n_neg);

            let png = out.join("images").join(case_id).join(format!("{image_id}.png"));
            fs::create_dir_all(png.parent().expect("has parent")).map_err(io_err(&png))?;
            img.save_png(&png)?;
            let doc = RectDocument::from_truths(&format!("{image_id}.png"), FIXTURE_SIZE, FIXTURE_SIZE, &truths, &labels);
            let mut json = serde_json::to_string_pretty(&doc).expect("document serializes");
            json.push('\n');
            write(&out.join("annotations").join(format!("{image_id}.json")), &json)?;
            let yolo = export_yolo_file(&truths, FIXTURE_SIZE, FIXTURE_SIZE).expect("truths fit the frame");
            write(&out.join("labels").join(format!("{image_id}.txt")), &yolo)?;

            perfect(&mut SeededRng::derive(seed, &format!("perfect/{image_id}")), &image_id, &truths, &mut perfect_set);
            corrupted(&mut SeededRng::derive(seed, &format!("corrupted/{image_id}")), &image_id, &truths, &mut corrupted_set);
            for (v, set) in VARIANTS.iter().zip(&mut variant_sets) {
                noisy(&mut SeededRng::derive(seed, &format!("{}/{image_id}", v.name)), v, &image_id, &truths, set);
            }
            n_pos_total += n_pos;
            n_neg_total += n_neg;
            images += 1;
        }
    }

    let ingested = ingest_directory(&out.join("images"), &out.join("annotations"), AnnotationFormat::RectJson, &labels)?;
    for w in &ingested.warnings {
        log::warn!("{w}");
    }
    let manifest = out.join("manifest.json");
    ingested.manifest.save(&manifest)?;
    let pool = out.join("pool_1863.json");
    pool_manifest().save(&pool)?;

    let mut predictions = Vec::new();
    for set in [&perfect_set, &corrupted_set].into_iter().chain(&variant_sets) {
        let path = out.join("predictions").join(format!("{}.jsonl", set.run_label));
        write(&path, &write_predictions_jsonl(set))?;
        predictions.push(path);
    }

    Ok(FixtureSummary {
        root: out.to_path_buf(),
        manifest,
        pool_manifest: pool,
        predictions,
        images,
        positive_truths: n_pos_total,
        negative_truths: n_neg_total,
    })
}
