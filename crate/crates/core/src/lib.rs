//! Ki-67 proliferation scoring for breast-cancer IHC hotspot images.
//!
//! The crate covers the pipeline around an external cell detector:
//!
//! - [`detection`]: boxes, IoU, confidence filtering and greedy NMS.
//! - [`dataset`]: annotation ingest (rectangle JSON, YOLO text), manifests,
//!   validation and leakage-safe splitting.
//! - [`augment`]: flips, rotations, crops and brightness shifts with exact
//!   box co-transforms.
//! - [`predictions`]: the detector boundary (prediction JSONL, post-processing,
//!   letterbox geometry).
//! - [`eval`]: IoU matching, PR curves, all-point AP, mAP50 and run comparison.
//! - [`scoring`]: hotspot and case Ki-67 indices, 500-cell adequacy and
//!   clinical banding.
//! - [`reporting`]: overlay rendering and case reports.
//! - [`review`]: event-sourced correction state and the HTTP review API.
//! - [`fixture`]: the synthetic desk-scale dataset used by the tests and examples.

pub mod augment;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod detection;
pub mod eval;
pub mod fixture;
pub mod predictions;
pub mod raster;
pub mod reporting;
pub mod review;
pub mod rng;
pub mod scoring;

pub use detection::{iou, nms, filter_confidence, BoundingBox, CellClass, Detection, GroundTruth};
