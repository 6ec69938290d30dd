mod oracles;

use ki67::augment::{apply_chain, apply_transform, generate_plan, AugmentConfig, Transform, MAX_CROP_FRACTION};
use ki67::dataset::{AnnotationSet, DatasetManifest, ImageRecord};
use ki67::raster::RasterImage;
use ki67::{BoundingBox, CellClass, GroundTruth};
use oracles::{corners, map_box, source_pixel, Gen};

const OPS: [(&str, Transform); 5] = [
    ("hflip", Transform::HFlip),
    ("vflip", Transform::VFlip),
    ("rot90_cw", Transform::Rot90Cw),
    ("rot90_ccw", Transform::Rot90Ccw),
    ("rot180", Transform::Rot180),
];

/// Every pixel distinct in its first two channels, so any misplaced pixel shows.
fn coded(w: u32, h: u32) -> RasterImage {
    let px = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            [(x & 0xff) as u8, (y & 0xff) as u8, ((x >> 8) | ((y >> 8) << 4)) as u8]
        })
        .collect();
    RasterImage::new(w, h, px).unwrap()
}

fn truths(g: &mut Gen, w: u32, h: u32) -> Vec<GroundTruth> {
    (0..40)
        .map(|_| {
            let x0 = g.below(u64::from(w) - 30) as f64 + 0.25;
            let y0 = g.below(u64::from(h) - 30) as f64 + 0.5;
            let b = BoundingBox::new(x0, y0, x0 + 4.0 + g.below(25) as f64, y0 + 3.0 + g.below(25) as f64).unwrap();
            GroundTruth::new(b, g.class())
        })
        .collect()
}

#[test]
fn geometric_ops_match_pixel_and_box_oracles_at_640() {
    let cfg = AugmentConfig::default();
    for (w, h) in [(640, 640), (640, 480)] {
        let img = coded(w, h);
        let t = truths(&mut Gen::new(u64::from(h)), w, h);
        for (name, op) in OPS {
            let (out, boxes) = apply_transform(&img, &t, &op, &cfg).unwrap();
            let rotates = matches!(op, Transform::Rot90Cw | Transform::Rot90Ccw);
            let (ow, oh) = if rotates { (h, w) } else { (w, h) };
            assert_eq!((out.width(), out.height()), (ow, oh), "{name}");
            for y in 0..oh {
                for x in 0..ow {
                    let (sx, sy) = source_pixel(name, x, y, w, h);
                    assert_eq!(out.get(x, y), img.get(sx, sy), "{name} at ({x},{y})");
                }
            }
            assert_eq!(boxes.len(), t.len());
            for (before, after) in t.iter().zip(&boxes) {
                assert_eq!(corners(&after.bbox), map_box(name, &before.bbox, f64::from(w), f64::from(h)), "{name}");
                assert_eq!(after.cls, before.cls);
            }
        }
    }
}

#[test]
fn involutions_and_inverse_rotations_are_bit_identical() {
    let cfg = AugmentConfig::default();
    let img = coded(640, 640);
    let t = truths(&mut Gen::new(1), 640, 640);
    for chain in [
        vec![Transform::Rot180, Transform::Rot180],
        vec![Transform::HFlip, Transform::HFlip],
        vec![Transform::VFlip, Transform::VFlip],
        vec![Transform::Rot90Cw, Transform::Rot90Ccw],
        vec![Transform::Rot90Cw; 4],
    ] {
        let (out, boxes) = apply_chain(&img, &t, &chain, &cfg).unwrap();
        assert_eq!(out, img, "{chain:?}");
        assert_eq!(boxes, t, "{chain:?}");
    }
}

#[test]
fn rot180_equals_both_flips() {
    let cfg = AugmentConfig::default();
    let img = coded(320, 200);
    let t = truths(&mut Gen::new(2), 320, 200);
    let a = apply_chain(&img, &t, &[Transform::Rot180], &cfg).unwrap();
    let b = apply_chain(&img, &t, &[Transform::HFlip, Transform::VFlip], &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn crop_keeps_pixels_and_drops_slivers() {
    let cfg = AugmentConfig::default();
    let img = coded(100, 100);
    let t = vec![
        GroundTruth::new(BoundingBox::new(40.0, 40.0, 60.0, 60.0).unwrap(), CellClass::Ki67Positive),
        // 8 of 10 columns cut away: 20% survives
        GroundTruth::new(BoundingBox::new(0.0, 20.0, 10.0, 30.0).unwrap(), CellClass::Ki67Negative),
        // 5 of 10 columns cut away: 50% survives
        GroundTruth::new(BoundingBox::new(3.0, 50.0, 13.0, 60.0).unwrap(), CellClass::Ki67Negative),
    ];
    let crop = Transform::Crop { left: 0.08, top: 0.05, right: 0.0, bottom: 0.02 };
    let (out, boxes) = apply_transform(&img, &t, &crop, &cfg).unwrap();
    assert_eq!((out.width(), out.height()), (92, 93));
    for y in 0..93 {
        for x in 0..92 {
            assert_eq!(out.get(x, y), img.get(x + 8, y + 5));
        }
    }
    let got: Vec<[f64; 4]> = boxes.iter().map(|b| corners(&b.bbox)).collect();
    assert_eq!(got, vec![[32.0, 35.0, 52.0, 55.0], [0.0, 45.0, 5.0, 55.0]]);
}

fn manifest(n: usize) -> DatasetManifest {
    let mut m = DatasetManifest::default();
    for i in 0..n {
        let id = format!("img{i:03}");
        m.records.push(ImageRecord {
            image_id: id.clone(),
            case_id: format!("c{}", i % 7),
            width: 640,
            height: 640,
            source_path: format!("{id}.png").into(),
            parent_id: None,
            lineage: vec![],
        });
        m.annotations.insert(id.clone(), AnnotationSet::empty(id));
    }
    m
}

#[test]
fn sampled_crop_fractions_never_exceed_the_limit() {
    let mut draws = 0;
    let mut seed = 0;
    while draws < 10_000 {
        let plan = generate_plan(&manifest(50), seed, 450).unwrap();
        for e in &plan.entries {
            for t in &e.transforms {
                if let Transform::Crop { left, top, right, bottom } = *t {
                    for f in [left, top, right, bottom] {
                        assert!((0.0..=MAX_CROP_FRACTION).contains(&f), "{f}");
                        draws += 1;
                    }
                }
            }
        }
        seed += 1;
    }
}

#[test]
fn plan_from_180_reaches_1863() {
    let plan = generate_plan(&manifest(180), 42, 1863).unwrap();
    assert_eq!(180 + plan.entries.len(), 1863);
    assert_eq!(plan, generate_plan(&manifest(180), 42, 1863).unwrap());
}
