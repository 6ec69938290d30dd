//! Evaluates every prediction run in the fixture and ranks them by mAP50.
//!
//! cargo run --example evaluate_run

use std::fs::File;
use std::io::BufReader;

use ki67::dataset::DatasetManifest;
use ki67::eval::{compare_runs, evaluate_run};
use ki67::fixture::generate_fixture;
use ki67::predictions::{parse_predictions, postprocess};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let summary = generate_fixture(dir.path(), 0)?;
    let manifest = DatasetManifest::load(&summary.manifest)?;

    let mut reports = Vec::new();
    for path in &summary.predictions {
        let label = path.file_stem().unwrap().to_string_lossy();
        let parsed = parse_predictions(BufReader::new(File::open(path)?), &label, false)?;
        // no confidence cut: the PR sweep needs every detection
        let dets = postprocess(&parsed.set, 0.0, 0.3);
        let report = evaluate_run(&label, &dets, &manifest, None, 0.5)?;
        for c in &report.classes {
            println!(
                "{label:>10} {:<14} P {:.3} R {:.3} AP50 {}",
                c.class_name,
                c.precision,
                c.recall,
                c.ap50.map_or("-".into(), |v| format!("{v:.4}"))
            );
        }
        reports.push(report);
    }
    println!();
    print!("{}", compare_runs(&reports).render_text());
    Ok(())
}
