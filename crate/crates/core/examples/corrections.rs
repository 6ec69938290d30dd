//! Applies reviewer corrections through the service API without HTTP, shows
//! the score moving, a version conflict, and replay after a restart.
//!
//! cargo run --example corrections

use ki67::dataset::{AnnotationSet, DatasetManifest, ImageRecord};
use ki67::predictions::{PredictionSet, RawPrediction};
use ki67::review::{CorrectionAction, CorrectionRequest, LogBackend, ReviewService};
use ki67::scoring::{Aggregation, ScoringConfig};
use ki67::{BoundingBox, CellClass};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut m = DatasetManifest::default();
    m.records.push(ImageRecord {
        image_id: "hotspot1".into(),
        case_id: "case1".into(),
        width: 200,
        height: 200,
        source_path: "hotspot1.png".into(),
        parent_id: None,
        lineage: vec![],
    });
    m.annotations.insert("hotspot1".into(), AnnotationSet::empty("hotspot1"));
    let mut preds = PredictionSet::new("demo");
    for k in 0..20 {
        let (x, y) = (f64::from(k % 10) * 18.0, f64::from(k / 10) * 18.0);
        let cls = if k < 10 { CellClass::Ki67Positive } else { CellClass::Ki67Negative };
        preds.push("hotspot1", RawPrediction { bbox: BoundingBox::new(x, y, x + 12.0, y + 12.0)?, cls, confidence: 0.8 });
    }

    let dir = tempfile::tempdir()?;
    let config = ScoringConfig { min_conf: 0.25, nms_threshold: 0.3, aggregation: Aggregation::Pooled };
    let service = ReviewService::open(&m, &preds, config, LogBackend::Dir(dir.path().into()))?;
    println!("before: {:.1}%", service.recompute_scores("case1")?.index_percent);

    let toggle = |index, base_version| CorrectionRequest {
        action: CorrectionAction::ToggleClass { index },
        actor: "pathologist".into(),
        base_version,
    };
    let state = service.submit("hotspot1", toggle(0, 0))?;
    println!("after toggle (version {}): {:.1}%", state.version, service.recompute_scores("case1")?.index_percent);
    match service.submit("hotspot1", toggle(1, 0)) {
        Err(e) => println!("stale edit rejected: {e}"),
        Ok(_) => unreachable!(),
    }

    drop(service);
    let reopened = ReviewService::open(&m, &preds, config, LogBackend::Dir(dir.path().into()))?;
    println!(
        "after restart (version {}): {:.1}%",
        reopened.state("hotspot1")?.version,
        reopened.recompute_scores("case1")?.index_percent
    );
    Ok(())
}
