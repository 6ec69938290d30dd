//! Converts truths to YOLO label lines and back.
//!
//! cargo run --example yolo_labels

use ki67::dataset::yolo::{export_yolo_file, parse_yolo_file};
use ki67::{BoundingBox, CellClass, GroundTruth};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truths = vec![
        GroundTruth::new(BoundingBox::new(12.0, 40.5, 30.0, 61.0)?, CellClass::Ki67Positive),
        GroundTruth::new(BoundingBox::new(300.25, 200.0, 318.0, 219.75)?, CellClass::Ki67Negative),
    ];
    let text = export_yolo_file(&truths, 640, 480)?;
    print!("{text}");
    for (a, b) in truths.iter().zip(parse_yolo_file(&text, 640, 480)?) {
        println!("{} -> {} ({:?})", a.bbox, b.bbox, b.cls);
    }
    Ok(())
}
