//! Slow, obviously-correct reference implementations used as test oracles.
//! Nothing here calls into the library's geometry or evaluation code.

#![allow(dead_code)]

use ki67::{BoundingBox, CellClass, Detection, GroundTruth};

pub fn corners(b: &BoundingBox) -> [f64; 4] {
    [b.x_min(), b.y_min(), b.x_max(), b.y_max()]
}

pub fn ref_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let [ax0, ay0, ax1, ay1] = corners(a);
    let [bx0, by0, bx1, by1] = corners(b);
    let w = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let h = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = w * h;
    let union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
    inter / union
}

/// True when detection `a` is processed before `b`.
fn ranks_before(a: &Detection, b: &Detection) -> bool {
    let key = |d: &Detection| (-d.confidence, d.bbox.x_min(), d.bbox.y_min(), d.cls.code());
    let (ka, kb) = (key(a), key(b));
    ka.partial_cmp(&kb) == Some(std::cmp::Ordering::Less)
}

/// Indices in processing order; insertion sort, equal keys keep input order.
pub fn ref_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = Vec::new();
    for i in 0..dets.len() {
        let pos = order
            .iter()
            .position(|&j| ranks_before(&dets[i], &dets[j]))
            .unwrap_or(order.len());
        order.insert(pos, i);
    }
    order
}

/// Every subset of `dets` is tested against the defining property of NMS:
/// a detection survives exactly when no surviving detection ranked before it
/// (of the same class, if class-aware) overlaps it by more than `t`. Panics
/// unless exactly one subset qualifies.
pub fn brute_force_nms(dets: &[Detection], t: f64, class_aware: bool) -> Vec<Detection> {
    let n = dets.len();
    assert!(n <= 16);
    let order = ref_order(dets);
    let rank: Vec<usize> = {
        let mut r = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            r[i] = pos;
        }
        r
    };
    let mut found = Vec::new();
    for mask in 0u32..(1 << n) {
        let inside = |i: usize| mask & (1 << i) != 0;
        let consistent = (0..n).all(|i| {
            let blocked = (0..n).any(|j| {
                inside(j)
                    && rank[j] < rank[i]
                    && (!class_aware || dets[j].cls == dets[i].cls)
                    && ref_iou(&dets[i].bbox, &dets[j].bbox) > t
            });
            inside(i) == !blocked
        });
        if consistent {
            found.push(mask);
        }
    }
    assert_eq!(found.len(), 1, "NMS fixed point must be unique");
    order
        .into_iter()
        .filter(|&i| found[0] & (1 << i) != 0)
        .map(|i| dets[i])
        .collect()
}

/// Per-detection TP flag under the greedy matching rule, written as a plain
/// loop over the reference order.
pub fn ref_greedy_flags(dets: &[Detection], truths: &[GroundTruth], thr: f64, cls: CellClass) -> Vec<(f64, bool)> {
    let mut used = vec![false; truths.len()];
    let mut out = Vec::new();
    for i in ref_order(dets) {
        let d = &dets[i];
        if d.cls != cls {
            continue;
        }
        let mut best = None;
        let mut best_iou = -1.0;
        for (j, t) in truths.iter().enumerate() {
            if used[j] || t.cls != cls {
                continue;
            }
            let v = ref_iou(&d.bbox, &t.bbox);
            if v >= thr && v > best_iou {
                best = Some(j);
                best_iou = v;
            }
        }
        if let Some(j) = best {
            used[j] = true;
        }
        out.push((d.confidence, best.is_some()));
    }
    out
}

/// AP by direct enumeration: for every distinct confidence level, count the
/// detections at or above it; interpolated precision at recall r is the best
/// precision at any level with recall >= r.
pub fn naive_ap(flags: &[(f64, bool)], n_truths: usize) -> f64 {
    assert!(n_truths > 0);
    let mut levels: Vec<f64> = flags.iter().map(|f| f.0).collect();
    levels.sort_by(|a, b| b.partial_cmp(a).unwrap());
    levels.dedup();
    let points: Vec<(f64, f64)> = levels
        .iter()
        .map(|&c| {
            let above: Vec<bool> = flags.iter().filter(|f| f.0 >= c).map(|f| f.1).collect();
            let tp = above.iter().filter(|&&x| x).count() as f64;
            (tp / n_truths as f64, tp / above.len() as f64)
        })
        .collect();
    let mut recalls: Vec<f64> = points.iter().map(|p| p.0).collect();
    recalls.sort_by(|a, b| a.partial_cmp(b).unwrap());
    recalls.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for r in recalls {
        let p = points
            .iter()
            .filter(|q| q.0 >= r)
            .map(|q| q.1)
            .fold(0.0, f64::max);
        ap += (r - prev) * p;
        prev = r;
    }
    ap
}

/// Largest number of one-to-one detection/truth pairs with IoU >= `thr`
/// for one class, by exhaustive search.
pub fn max_matching(dets: &[Detection], truths: &[GroundTruth], thr: f64, cls: CellClass) -> usize {
    let d: Vec<&Detection> = dets.iter().filter(|d| d.cls == cls).collect();
    let t: Vec<&GroundTruth> = truths.iter().filter(|t| t.cls == cls).collect();
    fn go(i: usize, d: &[&Detection], t: &[&GroundTruth], used: &mut Vec<bool>, thr: f64) -> usize {
        if i == d.len() {
            return 0;
        }
        let mut best = go(i + 1, d, t, used, thr);
        for j in 0..t.len() {
            if !used[j] && ref_iou(&d[i].bbox, &t[j].bbox) >= thr {
                used[j] = true;
                best = best.max(1 + go(i + 1, d, t, used, thr));
                used[j] = false;
            }
        }
        best
    }
    go(0, &d, &t, &mut vec![false; t.len()], thr)
}

/// Source pixel for output pixel `(x, y)` of a `w`x`h` image under each
/// geometric op, written directly from the definition of each rotation.
pub fn source_pixel(op: &str, x: u32, y: u32, w: u32, h: u32) -> (u32, u32) {
    match op {
        "hflip" => (w - 1 - x, y),
        "vflip" => (x, h - 1 - y),
        // clockwise: output column x comes from source row h-1-x
        "rot90_cw" => (y, h - 1 - x),
        "rot90_ccw" => (w - 1 - y, x),
        "rot180" => (w - 1 - x, h - 1 - y),
        _ => unreachable!("unknown op {op}"),
    }
}

/// Continuous point map for each op, used to carry box corners.
pub fn map_point(op: &str, x: f64, y: f64, w: f64, h: f64) -> (f64, f64) {
    match op {
        "hflip" => (w - x, y),
        "vflip" => (x, h - y),
        "rot90_cw" => (h - y, x),
        "rot90_ccw" => (y, w - x),
        "rot180" => (w - x, h - y),
        _ => unreachable!("unknown op {op}"),
    }
}

pub fn map_box(op: &str, b: &BoundingBox, w: f64, h: f64) -> [f64; 4] {
    let [x0, y0, x1, y1] = corners(b);
    let p = map_point(op, x0, y0, w, h);
    let q = map_point(op, x1, y1, w, h);
    [p.0.min(q.0), p.1.min(q.1), p.0.max(q.0), p.1.max(q.1)]
}

/// Small deterministic generator for test instances (splitmix64).
pub struct Gen(u64);

impl Gen {
    pub fn new(seed: u64) -> Self {
        Gen(seed)
    }

    pub fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next() % n
    }

    /// Integer-cornered box inside a `span`x`span` area.
    pub fn bbox(&mut self, span: u64) -> BoundingBox {
        let x0 = self.below(span - 2);
        let y0 = self.below(span - 2);
        let x1 = x0 + 1 + self.below(span - x0 - 1);
        let y1 = y0 + 1 + self.below(span - y0 - 1);
        BoundingBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64).unwrap()
    }

    pub fn class(&mut self) -> CellClass {
        if self.below(2) == 0 {
            CellClass::Ki67Positive
        } else {
            CellClass::Ki67Negative
        }
    }

    /// Confidences on a coarse grid so ties occur.
    pub fn confidence(&mut self) -> f64 {
        (1 + self.below(9)) as f64 / 10.0
    }

    pub fn detections(&mut self, max: u64, span: u64) -> Vec<Detection> {
        let n = self.below(max + 1);
        (0..n)
            .map(|_| {
                let b = self.bbox(span);
                let c = self.class();
                let conf = self.confidence();
                Detection::new(b, c, conf).unwrap()
            })
            .collect()
    }

    pub fn truths(&mut self, max: u64, span: u64) -> Vec<GroundTruth> {
        let n = self.below(max + 1);
        (0..n).map(|_| GroundTruth::new(self.bbox(span), self.class())).collect()
    }

    /// Truths on separate tiles of a grid, so no two touch.
    pub fn separated_truths(&mut self, max: u64) -> Vec<GroundTruth> {
        let n = self.below(max + 1);
        (0..n)
            .map(|k| {
                let ox = (k % 3) as f64 * 12.0;
                let oy = (k / 3) as f64 * 12.0;
                let w = 3.0 + self.below(6) as f64;
                let h = 3.0 + self.below(6) as f64;
                let b = BoundingBox::new(ox + 1.0, oy + 1.0, ox + 1.0 + w, oy + 1.0 + h).unwrap();
                GroundTruth::new(b, self.class())
            })
            .collect()
    }

    /// Detections jittered around `truths`, plus some strays.
    pub fn detections_near(&mut self, truths: &[GroundTruth], max: u64) -> Vec<Detection> {
        let n = self.below(max + 1);
        (0..n)
            .map(|_| {
                let (b, mut c) = if !truths.is_empty() && self.below(4) != 0 {
                    let t = truths[self.below(truths.len() as u64) as usize];
                    let j = |g: &mut Gen| g.below(3) as f64 - 1.0;
                    let x0 = (t.bbox.x_min() + j(self)).max(0.0);
                    let y0 = (t.bbox.y_min() + j(self)).max(0.0);
                    let x1 = (t.bbox.x_max() + j(self)).max(x0 + 1.0);
                    let y1 = (t.bbox.y_max() + j(self)).max(y0 + 1.0);
                    (BoundingBox::new(x0, y0, x1, y1).unwrap(), t.cls)
                } else {
                    (self.bbox(36), self.class())
                };
                if self.below(6) == 0 {
                    c = c.toggled();
                }
                let conf = self.confidence();
                Detection::new(b, c, conf).unwrap()
            })
            .collect()
    }
}
