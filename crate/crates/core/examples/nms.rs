//! Class-aware greedy NMS and the confidence filter on a handful of boxes.
//!
//! cargo run --example nms

use ki67::{filter_confidence, iou, nms, BoundingBox, CellClass, Detection};

fn det(x0: f64, y0: f64, x1: f64, y1: f64, cls: CellClass, conf: f64) -> Detection {
    Detection::new(BoundingBox::new(x0, y0, x1, y1).unwrap(), cls, conf).unwrap()
}

fn main() {
    let dets = vec![
        det(10.0, 10.0, 30.0, 30.0, CellClass::Ki67Positive, 0.92),
        det(12.0, 11.0, 31.0, 29.0, CellClass::Ki67Positive, 0.85),
        det(12.0, 11.0, 31.0, 29.0, CellClass::Ki67Negative, 0.60),
        det(50.0, 50.0, 66.0, 68.0, CellClass::Ki67Negative, 0.40),
        det(90.0, 20.0, 104.0, 35.0, CellClass::Ki67Positive, 0.12),
    ];
    println!("iou(0, 1) = {:.3}", iou(&dets[0].bbox, &dets[1].bbox));

    for (label, class_aware) in [("class-aware", true), ("class-agnostic", false)] {
        let kept = nms(&dets, 0.3, class_aware);
        println!("{label} NMS at 0.3 keeps {} of {}:", kept.len(), dets.len());
        for d in &kept {
            println!("  {:?} {:.2} {}", d.cls, d.confidence, d.bbox);
        }
    }

    let confident = filter_confidence(&nms(&dets, 0.3, true), 0.25);
    println!("after min_conf 0.25: {} detections", confident.len());
}
