//! Acceptance gate. Runs each criterion at its stated tolerance and prints one
//! PASS/FAIL line per criterion; exits non-zero if any fail.

mod oracles;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use axum::Router;
use ki67::augment::{apply_chain, apply_transform, generate_plan, AugmentConfig, Transform, MAX_CROP_FRACTION};
use ki67::dataset::{split_dataset, validate_manifest, AnnotationSet, DatasetManifest, ImageRecord, SplitSpec};
use ki67::eval::{average_precision, match_image, pr_curve, summarize, EvalError, EvaluationReport};
use ki67::fixture::pool_manifest;
use ki67::predictions::{parse_predictions, postprocess, PredictionSet};
use ki67::raster::RasterImage;
use ki67::review::{http, replay, CorrectionAction, CorrectionEvent, CorrectionRequest, ImageReviewState, LogBackend, ReviewService};
use ki67::scoring::{classify_band, ki67_index, score_case, Aggregation, ClinicalBand, HotspotScore, ScoringConfig};
use ki67::{nms, BoundingBox, CellClass, Detection, GroundTruth};
use tower::ServiceExt;

use oracles::{brute_force_nms, corners, map_box, naive_ap, ref_greedy_flags, source_pixel, Gen};

type Outcome = Result<String, String>;
type Criterion = (&'static str, Box<dyn FnOnce() -> Outcome>);

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ki67"))
}

fn run_ok(args: &[&str]) {
    let out = bin().args(args).output().unwrap();
    assert!(out.status.success(), "ki67 {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
    BoundingBox::new(x0, y0, x1, y1).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn nms_oracle() -> Outcome {
    let start = Instant::now();
    let mut g = Gen::new(0xacce);
    for i in 0..500 {
        let dets = g.detections(8, 16);
        for t in [0.3, 0.5] {
            for aware in [true, false] {
                ensure(nms(&dets, t, aware) == brute_force_nms(&dets, t, aware), || format!("instance {i}, t={t}, class_aware={aware}"))?;
            }
        }
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(5), || format!("took {took:?}"))?;
    Ok(format!("500 instances x 4 settings identical, {took:.2?}"))
}

fn ap_correctness() -> Outcome {
    let pos = CellClass::Ki67Positive;
    let truths = [GroundTruth::new(bx(0.0, 0.0, 10.0, 10.0), pos), GroundTruth::new(bx(40.0, 0.0, 50.0, 10.0), pos)];
    let dets = [
        Detection::new(bx(0.0, 0.0, 10.0, 10.0), pos, 0.9).unwrap(),
        Detection::new(bx(80.0, 80.0, 90.0, 90.0), pos, 0.8).unwrap(),
        Detection::new(bx(40.0, 0.0, 50.0, 10.0), pos, 0.7).unwrap(),
    ];
    let hand = average_precision(&pr_curve(&[match_image(&dets, &truths, 0.5)], pos).unwrap());
    ensure((hand - 5.0 / 6.0).abs() <= 1e-9, || format!("hand case AP {hand}"))?;

    let mut g = Gen::new(0xa9);
    let mut compared = 0;
    let mut worst: f64 = 0.0;
    for i in 0..500 {
        let truths = g.truths(6, 20);
        let dets = g.detections_near(&truths, 6);
        let o = [match_image(&dets, &truths, 0.5)];
        for cls in CellClass::ALL {
            let n = truths.iter().filter(|t| t.cls == cls).count();
            match pr_curve(&o, cls) {
                Ok(curve) => {
                    let diff = (average_precision(&curve) - naive_ap(&ref_greedy_flags(&dets, &truths, 0.5, cls), n)).abs();
                    worst = worst.max(diff);
                    ensure(diff <= 1e-9, || format!("instance {i} {cls:?}: off by {diff}"))?;
                    compared += 1;
                }
                Err(EvalError::NoGroundTruth(_)) if n == 0 => {}
                Err(e) => return Err(format!("instance {i}: {e}")),
            }
        }
    }

    let mut g = Gen::new(0x9e);
    for i in 0..200 {
        let mut truths = g.separated_truths(6);
        truths.push(GroundTruth::new(bx(100.0, 100.0, 108.0, 108.0), CellClass::Ki67Positive));
        truths.push(GroundTruth::new(bx(120.0, 100.0, 128.0, 108.0), CellClass::Ki67Negative));
        let perfect: Vec<Detection> = truths.iter().map(|t| Detection::new(t.bbox, t.cls, g.confidence()).unwrap()).collect();
        let p = summarize("perfect", &[match_image(&perfect, &truths, 0.5)], 0.5).unwrap();
        ensure(p.map50 == 1.0, || format!("perfect instance {i}: mAP50 {}", p.map50))?;
        let silent = summarize("silent", &[match_image(&[], &truths, 0.5)], 0.5).unwrap();
        ensure(silent.ap(CellClass::Ki67Positive) == Some(0.0) && silent.ap(CellClass::Ki67Negative) == Some(0.0), || format!("silent instance {i}"))?;
    }
    Ok(format!("hand case {hand:.12}; {compared} class curves vs naive, max diff {worst:e}; perfect 1.0, silent 0.0"))
}

fn matching_conservation() -> Outcome {
    let mut g = Gen::new(0xc0);
    for i in 0..1000 {
        let truths = g.truths(6, 20);
        let dets = if i % 2 == 0 { g.detections_near(&truths, 6) } else { g.detections(6, 20) };
        let o = match_image(&dets, &truths, 0.5);
        for cls in CellClass::ALL {
            let c = o.class(cls);
            let (nt, nd) = (truths.iter().filter(|t| t.cls == cls).count(), dets.iter().filter(|d| d.cls == cls).count());
            ensure(c.tp + c.fn_ == nt && c.tp + c.fp == nd, || format!("instance {i} {cls:?}: tp {} fp {} fn {} truths {nt} dets {nd}", c.tp, c.fp, c.fn_))?;
        }
    }
    Ok("0 violations over 1000 instances".into())
}

fn coded(w: u32, h: u32) -> RasterImage {
    let px = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            [(x & 0xff) as u8, (y & 0xff) as u8, ((x >> 8) | ((y >> 8) << 4)) as u8]
        })
        .collect();
    RasterImage::new(w, h, px).unwrap()
}

fn augmentation_exactness() -> Outcome {
    let cfg = AugmentConfig::default();
    let img = coded(640, 640);
    let mut g = Gen::new(0x640);
    let truths: Vec<GroundTruth> = (0..50)
        .map(|_| {
            let (x, y) = (g.below(600) as f64 + 0.5, g.below(600) as f64 + 0.25);
            GroundTruth::new(bx(x, y, x + 3.0 + g.below(30) as f64, y + 2.0 + g.below(30) as f64), g.class())
        })
        .collect();
    let ops = [("hflip", Transform::HFlip), ("vflip", Transform::VFlip), ("rot90_cw", Transform::Rot90Cw), ("rot90_ccw", Transform::Rot90Ccw), ("rot180", Transform::Rot180)];
    for (name, op) in ops {
        let (out, boxes) = apply_transform(&img, &truths, &op, &cfg).unwrap();
        for y in 0..640 {
            for x in 0..640 {
                let (sx, sy) = source_pixel(name, x, y, 640, 640);
                ensure(out.get(x, y) == img.get(sx, sy), || format!("{name}: pixel ({x},{y})"))?;
            }
        }
        ensure(boxes.len() == truths.len(), || format!("{name}: {} of {} boxes", boxes.len(), truths.len()))?;
        for (t, b) in truths.iter().zip(&boxes) {
            ensure(corners(&b.bbox) == map_box(name, &t.bbox, 640.0, 640.0) && b.cls == t.cls, || format!("{name}: box {}", t.bbox))?;
        }
    }
    for chain in [[Transform::Rot180, Transform::Rot180], [Transform::HFlip, Transform::HFlip]] {
        let (out, boxes) = apply_chain(&img, &truths, &chain, &cfg).unwrap();
        ensure(out == img && boxes == truths, || format!("{chain:?} is not the identity"))?;
    }

    let mut m = DatasetManifest::default();
    for i in 0..50 {
        let id = format!("img{i:02}");
        m.records.push(ImageRecord { image_id: id.clone(), case_id: "c".into(), width: 640, height: 640, source_path: format!("{id}.png").into(), parent_id: None, lineage: vec![] });
        m.annotations.insert(id.clone(), AnnotationSet::empty(id));
    }
    let (mut draws, mut max, mut seed) = (0, 0.0f64, 0);
    while draws < 10_000 {
        for e in generate_plan(&m, seed, 450).unwrap().entries {
            for t in e.transforms {
                if let Transform::Crop { left, top, right, bottom } = t {
                    for f in [left, top, right, bottom] {
                        ensure((0.0..=MAX_CROP_FRACTION).contains(&f), || format!("crop fraction {f}"))?;
                        max = max.max(f);
                        draws += 1;
                    }
                }
            }
        }
        seed += 1;
    }
    ensure(MAX_CROP_FRACTION == 0.08, || "crop limit changed".into())?;
    Ok(format!("5 ops bit-exact at 640x640, involutions identical, {draws} crop draws max {max:.4}"))
}

fn dataset_reproduction(work: &Path) -> Outcome {
    let pool = pool_manifest();
    ensure(pool.records.len() == 1863, || format!("{} records", pool.records.len()))?;
    let spec = SplitSpec::counts(1556, 200, 107, 11);
    let a = split_dataset(&pool, &spec, false).map_err(|e| e.to_string())?;
    let sizes: Vec<usize> = a.split_sizes().into_values().collect();
    ensure(sizes == [1556, 200, 107], || format!("sizes {sizes:?}"))?;
    let b = split_dataset(&pool, &spec, false).unwrap();
    let (ja, jb) = (serde_json::to_vec(&a.split).unwrap(), serde_json::to_vec(&b.split).unwrap());
    ensure(ja == jb, || "same seed gave different split maps".into())?;

    // through the tool on the pool file, and leakage on an augmented set
    let f = work.join("fixture");
    run_ok(&["fixture", "--out", s(&f), "--seed", "5"]);
    let out = work.join("split.json");
    run_ok(&["split", "--manifest", s(&f.join("pool_1863.json")), "--counts", "1556,200,107", "--seed", "11", "--out", s(&out)]);
    let cli = DatasetManifest::load(&out).unwrap();
    ensure(serde_json::to_vec(&cli.split).unwrap() == ja, || "CLI split differs from library split".into())?;

    let aug = work.join("aug");
    run_ok(&["augment", "--manifest", s(&f.join("manifest.json")), "--target", "60", "--seed", "3", "--out-dir", s(&aug)]);
    let aug_manifest = aug.join("manifest.json");
    run_ok(&["split", "--manifest", s(&aug_manifest), "--seed", "4"]);
    let m = DatasetManifest::load(&aug_manifest).unwrap();
    let children: Vec<&ImageRecord> = m.records.iter().filter(|r| r.is_augmented()).collect();
    let straddling = children.iter().filter(|r| m.split_of(&r.image_id) != m.split_of(r.parent_id.as_deref().unwrap())).count();
    let leak_findings = validate_manifest(&m).iter().filter(|f| f.message.contains("leakage")).count();
    ensure(straddling == 0 && leak_findings == 0 && !children.is_empty(), || format!("{straddling} of {} children straddle splits", children.len()))?;
    Ok(format!("1556/200/107 exact, split map reproducible, 0 of {} augmented children straddle splits", children.len()))
}

fn scoring() -> Outcome {
    let idx = ki67_index(27653, 4743).unwrap();
    ensure((idx - 85.36).abs() <= 0.01, || format!("index {idx}"))?;
    for (v, band) in [(4.99, ClinicalBand::Low), (5.0, ClinicalBand::Intermediate), (30.0, ClinicalBand::Intermediate), (30.01, ClinicalBand::High)] {
        ensure(classify_band(v) == band, || format!("{v} -> {:?}", classify_band(v)))?;
    }
    let cfg = ScoringConfig { min_conf: 0.25, nms_threshold: 0.3, aggregation: Aggregation::Pooled };
    let hot = |id: &str, p: usize, n: usize| HotspotScore { image_id: id.into(), n_pos: p, n_neg: n, index_percent: ki67_index(p, n).unwrap() };
    let pooled = score_case("c", vec![hot("a", 80, 20), hot("b", 40, 60)], &cfg).unwrap();
    ensure(pooled.index_percent == 60.0, || format!("pooled {}", pooled.index_percent))?;
    let at = |total: usize| score_case("c", vec![hot("a", total / 2, total - total / 2)], &cfg).unwrap().adequate;
    ensure(!at(499) && at(500) && at(501), || "adequacy does not flip at 500".into())?;
    Ok(format!("index {idx:.4}, bands exact, pooled 60.0, adequacy flips at 500"))
}

fn end_to_end(work: &Path) -> Outcome {
    let start = Instant::now();
    let f = work.join("fixture");
    run_ok(&["fixture", "--out", s(&f), "--seed", "2"]);
    let manifest = f.join("manifest.json");
    run_ok(&["validate", "--manifest", s(&manifest)]);
    let m = DatasetManifest::load(&manifest).unwrap();
    ensure(m.records.len() == 12 && m.case_ids().len() == 2, || format!("{} images, {} cases", m.records.len(), m.case_ids().len()))?;

    let eval = |run: &str| -> EvaluationReport {
        let out = work.join(format!("{run}_eval.json"));
        let preds = f.join("predictions").join(format!("{run}.jsonl"));
        run_ok(&["evaluate", "--manifest", s(&manifest), "--predictions", s(&preds), "--out", s(&out)]);
        serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap()
    };
    let perfect = eval("perfect");
    ensure(perfect.map50 == 1.0, || format!("perfect mAP50 {}", perfect.map50))?;
    let corrupted = eval("corrupted");
    let mut recalls = Vec::new();
    for cls in CellClass::ALL {
        let r = corrupted.class(cls).unwrap().recall;
        ensure((r - 0.8).abs() <= 0.001, || format!("corrupted {cls:?} recall {r}"))?;
        recalls.push(r);
    }
    run_ok(&["score", "--all", "--min-conf", "0.25", "--manifest", s(&manifest), "--predictions", s(&f.join("predictions/perfect.jsonl")), "--out", s(&work.join("scores"))]);
    let took = start.elapsed();
    ensure(took < Duration::from_secs(30), || format!("pipeline took {took:?}"))?;
    Ok(format!("perfect mAP50 1.0, corrupted recall {:.4}/{:.4}, pipeline {took:.2?}", recalls[0], recalls[1]))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header(header::CONTENT_TYPE, "application/json");
    }
    let resp = app.clone().oneshot(req.body(body.map_or_else(Body::empty, Body::from)).unwrap()).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
}

fn service_determinism(work: &Path) -> Outcome {
    let f = work.join("fixture");
    run_ok(&["fixture", "--out", s(&f), "--seed", "9"]);
    let m = DatasetManifest::load(&f.join("manifest.json")).unwrap();
    let preds_path = f.join("predictions/small.jsonl");
    let set: PredictionSet = parse_predictions(std::io::BufReader::new(std::fs::File::open(&preds_path).unwrap()), "small", false).unwrap().set;
    let cfg = ScoringConfig { min_conf: 0.25, nms_threshold: 0.3, aggregation: Aggregation::Pooled };
    let logs = work.join("logs");
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().unwrap();

    // serve with zero corrections answers exactly what `score` writes
    let scores = work.join("scores");
    run_ok(&["score", "--all", "--min-conf", "0.25", "--manifest", s(&f.join("manifest.json")), "--predictions", s(&preds_path), "--out", s(&scores)]);
    let svc = Arc::new(ReviewService::open(&m, &set, cfg, LogBackend::Dir(logs.clone())).unwrap());
    let app = http::router(svc.clone(), None);
    for case in m.case_ids() {
        let (status, body) = rt.block_on(call(&app, "GET", &format!("/api/cases/{case}/score"), None));
        let expected = std::fs::read(scores.join(format!("{case}.json"))).unwrap();
        ensure(status == StatusCode::OK && body == expected, || format!("{case}: served score differs from `score` output"))?;
    }

    // racing corrections
    let image = "case_a_h01";
    let toggle = |index: usize, v: u64| serde_json::json!({ "action": { "type": "toggle_class", "index": index }, "actor": "r", "base_version": v }).to_string();
    let rounds = 25;
    for v in 0..rounds {
        let uri = format!("/api/images/{image}/corrections");
        let (a, b) = rt.block_on(async { tokio::join!(call(&app, "POST", &uri, Some(toggle(0, v))), call(&app, "POST", &uri, Some(toggle(1, v)))) });
        let mut codes = [a.0, b.0];
        codes.sort();
        ensure(codes == [StatusCode::OK, StatusCode::CONFLICT], || format!("round {v}: {codes:?}"))?;
    }

    // more corrections across images, then replay
    let mut g = Gen::new(0x5e);
    for k in 0..40 {
        let rec = &m.records[g.below(m.records.len() as u64) as usize];
        let st = svc.state(&rec.image_id).unwrap();
        let n = st.detections.len() as u64;
        let action = match g.below(3) {
            0 if n > 0 => CorrectionAction::Delete { index: g.below(n) as usize },
            1 if n > 0 => CorrectionAction::ToggleClass { index: g.below(n) as usize },
            _ => {
                let (x, y) = (g.below(600) as f64 + 0.5, g.below(600) as f64);
                CorrectionAction::Add { bbox: bx(x, y, x + 9.25, y + 11.0), cls: g.class() }
            }
        };
        svc.submit(&rec.image_id, CorrectionRequest { action, actor: format!("reviewer{k}"), base_version: st.version }).map_err(|e| e.to_string())?;
    }
    let live: BTreeMap<String, String> = m.records.iter().map(|r| (r.image_id.clone(), serde_json::to_string(&svc.state(&r.image_id).unwrap()).unwrap())).collect();
    drop(app);
    drop(svc);

    let reopened = ReviewService::open(&m, &set, cfg, LogBackend::Dir(logs.clone())).unwrap();
    // and independently: fold each case log over the model output
    let model = postprocess(&set, 0.0, cfg.nms_threshold);
    let mut events: Vec<CorrectionEvent> = Vec::new();
    for case in m.case_ids() {
        let path = logs.join(format!("{case}.jsonl"));
        if let Ok(text) = std::fs::read_to_string(&path) {
            events.extend(text.lines().map(|l| serde_json::from_str::<CorrectionEvent>(l).unwrap()));
        }
    }
    for r in &m.records {
        let again = serde_json::to_string(&reopened.state(&r.image_id).unwrap()).unwrap();
        ensure(again == live[&r.image_id], || format!("{}: restart state differs", r.image_id))?;
        let original = ImageReviewState::from_model(&r.image_id, model.get(&r.image_id).map(Vec::as_slice).unwrap_or(&[]));
        let mine: Vec<CorrectionEvent> = events.iter().filter(|e| e.image_id == r.image_id).cloned().collect();
        let folded = replay(&original, &mine, (r.width, r.height)).map_err(|e| e.to_string())?;
        ensure(serde_json::to_string(&folded).unwrap() == live[&r.image_id], || format!("{}: replayed state differs", r.image_id))?;
    }
    Ok(format!("served scores equal `score` output, {rounds}/{rounds} races gave one 200 and one 409, {} logged events replay byte-identically", events.len()))
}

fn main() {
    let work = tempfile::tempdir().unwrap();
    let dir = |name: &str| {
        let d = work.path().join(name);
        std::fs::create_dir_all(&d).unwrap();
        d
    };
    let (d_split, d_e2e, d_svc) = (dir("split"), dir("e2e"), dir("service"));
    let criteria: Vec<Criterion> = vec![
        ("nms_oracle_equivalence", Box::new(nms_oracle)),
        ("ap_correctness", Box::new(ap_correctness)),
        ("matching_conservation", Box::new(matching_conservation)),
        ("augmentation_exactness", Box::new(augmentation_exactness)),
        ("dataset_reproduction", Box::new(move || dataset_reproduction(&d_split))),
        ("scoring", Box::new(scoring)),
        ("end_to_end_fixture", Box::new(move || end_to_end(&d_e2e))),
        ("service_determinism", Box::new(move || service_determinism(&d_svc))),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
