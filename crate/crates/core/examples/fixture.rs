//! Writes the synthetic two-case fixture (images, rect-JSON and YOLO labels,
//! manifest, prediction runs) and summarises it.
//!
//! cargo run --example fixture -- [OUT_DIR]

use ki67::dataset::DatasetManifest;
use ki67::fixture::generate_fixture;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("ki67-fixture"));
    let summary = generate_fixture(&out, 0)?;
    println!(
        "{} images, {} positive / {} negative cells under {}",
        summary.images,
        summary.positive_truths,
        summary.negative_truths,
        summary.root.display()
    );
    let m = DatasetManifest::load(&summary.manifest)?;
    for case in m.case_ids() {
        println!("  {case}: {} images", m.case_records(&case).len());
    }
    for p in &summary.predictions {
        println!("  run {}", p.display());
    }
    Ok(())
}
