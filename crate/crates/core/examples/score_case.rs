//! Scores both fixture cases from a prediction run and prints the text and
//! JSON case reports.
//!
//! cargo run --example score_case

use std::fs::File;
use std::io::BufReader;

use ki67::dataset::DatasetManifest;
use ki67::fixture::generate_fixture;
use ki67::predictions::{parse_predictions, postprocess};
use ki67::reporting::{case_score_json, emit_case_report};
use ki67::scoring::{ki67_index, score_manifest_case, Aggregation, ScoringConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let summary = generate_fixture(dir.path(), 0)?;
    let manifest = DatasetManifest::load(&summary.manifest)?;
    let run = dir.path().join("predictions/medium.jsonl");
    let set = parse_predictions(BufReader::new(File::open(run)?), "medium", false)?.set;

    let config = ScoringConfig { min_conf: 0.25, nms_threshold: 0.3, aggregation: Aggregation::Pooled };
    let dets = postprocess(&set, config.min_conf, config.nms_threshold);
    for case in manifest.case_ids() {
        let score = score_manifest_case(&manifest, &case, &dets, &config)?;
        println!("{}", emit_case_report(&score, None).text);
        if case == "case_b" {
            println!("{}", case_score_json(&score));
        }
    }
    println!("index for 27653 positive / 4743 negative: {:.2}%", ki67_index(27653, 4743)?);
    Ok(())
}
