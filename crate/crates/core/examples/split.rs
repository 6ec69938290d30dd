//! Seeded train/val/test splits: exact counts on a flat 1,863-record pool and
//! lineage-aware fractions on an augmented manifest.
//!
//! cargo run --example split

use ki67::augment::{execute_plan, generate_plan, ExecuteOptions, MemoryStore};
use ki67::dataset::{split_dataset, validate_manifest, DatasetManifest, Split, SplitSpec};
use ki67::fixture::pool_manifest;
use ki67::raster::RasterImage;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pool = pool_manifest();
    let split = split_dataset(&pool, &SplitSpec::counts(1556, 200, 107, 7), false)?;
    println!("pool of {}: {:?}", pool.records.len(), split.split_sizes());

    // 30 base images, augmented to 120; children must land with their parent
    let mut m = DatasetManifest::default();
    let store = MemoryStore::default();
    for r in pool.records.iter().take(30) {
        m.records.push(r.clone());
        m.annotations.insert(r.image_id.clone(), pool.annotations[&r.image_id].clone());
        store.insert(r.image_id.clone(), RasterImage::filled(r.width, r.height, [230, 225, 235])?);
    }
    let plan = generate_plan(&m, 3, 120)?;
    let augmented = execute_plan(&m, &plan, &store, &ExecuteOptions::default())?.manifest;

    let split = split_dataset(&augmented, &SplitSpec::fractions(0.8, 0.1, 0.1, 3), false)?;
    println!("augmented set of {}: {:?}", split.records.len(), split.split_sizes());
    let leaks = validate_manifest(&split).iter().filter(|f| f.message.contains("leakage")).count();
    println!("leakage findings: {leaks}");
    let test = split.subset(Some(Split::Test));
    println!("test split: {} records from {} base images", test.len(), test.iter().filter(|r| !r.is_augmented()).count());
    Ok(())
}
