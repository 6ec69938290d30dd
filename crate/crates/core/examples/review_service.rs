//! Starts the review HTTP service on the fixture with corrections logged to a
//! temporary directory. Point a browser or curl at the printed address.
//!
//! cargo run --example review_service -- [PORT]
//!
//! curl localhost:8080/api/cases
//! curl localhost:8080/api/cases/case_a/score?min_conf=0.5
//! curl -X POST localhost:8080/api/images/case_a_h01/corrections \
//!   -H 'content-type: application/json' \
//!   -d '{"action":{"type":"toggle_class","index":0},"actor":"me","base_version":0}'

use std::fs::File;
use std::io::BufReader;
use std::net::SocketAddr;
use std::sync::Arc;

use ki67::dataset::DatasetManifest;
use ki67::fixture::generate_fixture;
use ki67::predictions::parse_predictions;
use ki67::review::{http, LogBackend, ReviewService};
use ki67::scoring::{Aggregation, ScoringConfig};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let port: u16 = std::env::args().nth(1).map_or(Ok(8080), |p| p.parse())?;
    let dir = tempfile::tempdir()?;
    let summary = generate_fixture(dir.path(), 0)?;
    let manifest = DatasetManifest::load(&summary.manifest)?;
    let run = dir.path().join("predictions/small.jsonl");
    let set = parse_predictions(BufReader::new(File::open(run)?), "small", false)?.set;

    let config = ScoringConfig { min_conf: 0.25, nms_threshold: 0.3, aggregation: Aggregation::Pooled };
    let logs = dir.path().join("logs");
    let service = ReviewService::open(&manifest, &set, config, LogBackend::Dir(logs.clone()))?;
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    println!("serving on http://{addr}, correction logs in {}", logs.display());
    http::serve(Arc::new(service), addr, None).await?;
    Ok(())
}
