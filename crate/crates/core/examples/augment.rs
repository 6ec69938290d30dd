//! Plans and executes seeded augmentations in memory, then checks that the
//! geometric ops invert cleanly.
//!
//! cargo run --example augment

use ki67::augment::{apply_chain, execute_plan, generate_plan, AugmentConfig, ExecuteOptions, MemoryStore, Transform};
use ki67::dataset::{validate_manifest, AnnotationSet, DatasetManifest, ImageRecord};
use ki67::fixture::synth_image;
use ki67::rng::SeededRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let store = MemoryStore::default();
    let mut m = DatasetManifest::default();
    let mut rng = SeededRng::new(1);
    for i in 0..4 {
        let id = format!("img{i}");
        let (img, truths) = synth_image(&mut rng, 20, 30);
        m.records.push(ImageRecord {
            image_id: id.clone(),
            case_id: "demo".into(),
            width: img.width(),
            height: img.height(),
            source_path: format!("{id}.png").into(),
            parent_id: None,
            lineage: vec![],
        });
        m.annotations.insert(id.clone(), AnnotationSet { image_id: id.clone(), truths });
        store.insert(id, img);
    }

    let plan = generate_plan(&m, 42, 12)?;
    for e in &plan.entries {
        println!("{} <- {} {:?}", e.new_id, e.source_id, e.transforms);
    }
    let outcome = execute_plan(&m, &plan, &store, &ExecuteOptions::default())?;
    println!("{} records, {} validation findings", outcome.manifest.records.len(), validate_manifest(&outcome.manifest).len());

    let img = store.get("img0").unwrap();
    let truths = m.truths("img0");
    let cfg = AugmentConfig::default();
    let (back, boxes) = apply_chain(&img, truths, &[Transform::Rot90Cw, Transform::HFlip, Transform::HFlip, Transform::Rot90Ccw], &cfg)?;
    println!("round trip identical: {}", back == img && boxes == truths);
    Ok(())
}
