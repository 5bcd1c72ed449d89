//! Rotated-box overlap (bird's-eye view and 3D) and average precision with
//! easy/moderate/hard difficulty buckets.
//!
//! Overlap of heading-rotated footprints is exact: the intersection polygon
//! comes from Sutherland-Hodgman clipping of one convex quad against the
//! other, its area from the shoelace formula. Matching follows the familiar
//! benchmark convention: per-sample greedy assignment in descending score
//! order, where ground truths outside the active difficulty bucket are
//! "don't care" and matched detections count neither as hit nor as miss.

use crate::fvproj::{iou_map_rects, map_rect_of_box, ProjectionConfig};
use crate::geom::{box_footprint, Box3D, ClassId};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Degenerate contacts below this area count as no overlap.
pub const AREA_EPSILON: f64 = 1e-12;

/// A scored detection attributed to one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub sample: usize,
    pub class: ClassId,
    pub box3d: Box3D,
    pub score: f64,
}

/// An annotated object with its difficulty attributes. `box_height_px` is
/// the object's box height on the front-view map, standing in for the
/// camera-image box height the benchmark thresholds were defined on.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub sample: usize,
    pub class: ClassId,
    pub box3d: Box3D,
    pub truncation: f64,
    pub occlusion: u8,
    pub box_height_px: f64,
    /// Explicitly unscorable region; never a hit, never a miss.
    pub dont_care: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn name(&self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
        }
    }

    /// (min box height px, max occlusion, max truncation).
    pub fn spec(&self) -> (f64, u8, f64) {
        match self {
            Difficulty::Easy => (40.0, 0, 0.15),
            Difficulty::Moderate => (25.0, 1, 0.30),
            Difficulty::Hard => (25.0, 2, 0.50),
        }
    }

    pub fn contains(&self, gt: &GroundTruth) -> bool {
        let (min_h, max_occ, max_trunc) = self.spec();
        gt.box_height_px >= min_h && gt.occlusion <= max_occ && gt.truncation <= max_trunc
    }
}

/// Which overlap measure a PR curve uses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum IouKind {
    /// Rotated footprints on the ground plane.
    Bev,
    /// Volumetric overlap.
    ThreeD,
    /// Axis-aligned boxes on the front-view map.
    Map2d(ProjectionConfig),
}

impl IouKind {
    pub fn name(&self) -> &'static str {
        match self {
            IouKind::Bev => "bev",
            IouKind::ThreeD => "3d",
            IouKind::Map2d(_) => "2d-map",
        }
    }

    pub fn overlap(&self, a: &Box3D, b: &Box3D) -> f64 {
        match self {
            IouKind::Bev => iou_bev(a, b),
            IouKind::ThreeD => iou_3d(a, b),
            IouKind::Map2d(cfg) => match (map_rect_of_box(a, cfg), map_rect_of_box(b, cfg)) {
                (Some(ra), Some(rb)) => iou_map_rects(&ra, &rb),
                _ => 0.0,
            },
        }
    }
}

/// Benchmark overlap thresholds: 0.7 for cars, 0.5 for the small classes.
pub fn default_iou_threshold(class: ClassId) -> f64 {
    match class {
        ClassId::Car => 0.7,
        ClassId::Pedestrian | ClassId::Cyclist => 0.5,
    }
}

fn signed_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

/// Unsigned polygon area; degenerate slivers collapse to zero.
pub fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    let a = signed_area(poly).abs();
    if a < AREA_EPSILON {
        0.0
    } else {
        a
    }
}

fn cross_from(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

fn line_intersect(p1: (f64, f64), p2: (f64, f64), a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let d1 = cross_from(a, b, p1);
    let d2 = cross_from(a, b, p2);
    let denom = d1 - d2;
    if denom.abs() < 1e-300 {
        return p1;
    }
    let t = d1 / denom;
    (p1.0 + t * (p2.0 - p1.0), p1.1 + t * (p2.1 - p1.1))
}

/// Sutherland-Hodgman: clip a convex subject polygon against a convex,
/// counter-clockwise clip polygon.
pub fn clip_polygon(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut output: Vec<(f64, f64)> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross_from(a, b, cur) >= -AREA_EPSILON;
            let prev_in = cross_from(a, b, prev) >= -AREA_EPSILON;
            if cur_in {
                if !prev_in {
                    output.push(line_intersect(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersect(prev, cur, a, b));
            }
        }
    }
    output
}

/// Footprint intersection area of two oriented boxes.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let fa = box_footprint(a);
    let fb = box_footprint(b);
    polygon_area(&clip_polygon(&fa, &fb))
}

/// Intersection over union of heading-rotated footprints.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection_area(a, b);
    let union = a.w * a.l + b.w * b.l - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Volumetric intersection over union: footprint overlap times vertical
/// interval overlap, against the volume union.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let inter_area = bev_intersection_area(a, b);
    let lo = (a.cz - a.h / 2.0).max(b.cz - b.h / 2.0);
    let hi = (a.cz + a.h / 2.0).min(b.cz + b.h / 2.0);
    let inter = inter_area * (hi - lo).max(0.0);
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// How the precision-recall curve integrates into a scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ApKind {
    /// Max precision sampled at recalls {0, 0.1, ..., 1.0}.
    Eleven,
    /// Max precision sampled at recalls {1/40, ..., 40/40}.
    Forty,
}

fn interpolated_ap(pairs: &[(f64, f64)], recalls: impl Iterator<Item = f64>) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for r in recalls {
        let p = pairs
            .iter()
            .filter(|(rec, _)| *rec >= r - 1e-12)
            .map(|&(_, prec)| prec)
            .fold(0.0f64, f64::max);
        total += p;
        count += 1;
    }
    total / count as f64
}

/// Eleven-point interpolated average precision over (recall, precision)
/// pairs.
pub fn ap_11point(pairs: &[(f64, f64)]) -> f64 {
    interpolated_ap(pairs, (0..=10).map(|i| i as f64 / 10.0))
}

/// Forty-point interpolated average precision (recall zero excluded).
pub fn ap_40point(pairs: &[(f64, f64)]) -> f64 {
    interpolated_ap(pairs, (1..=40).map(|i| i as f64 / 40.0))
}

/// Precision-recall curve with its scalar summary. `ap` is absent when the
/// bucket holds no ground truths at all.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PRCurve {
    pub points: Vec<(f64, f64)>,
    pub ap: Option<f64>,
}

/// Match detections to ground truths and build the PR curve for one class,
/// bucket and overlap kind.
///
/// Valid ground truths are the in-bucket, non-dont-care ones of the class;
/// same-class out-of-bucket and explicit dont-care boxes only absorb
/// detections. A detection first tries the best unmatched valid ground
/// truth at or above the threshold (hit); failing that, any absorbing box
/// at or above the threshold removes it from scoring; otherwise it is a
/// false positive.
pub fn evaluate(
    dets: &[Detection],
    gts: &[GroundTruth],
    class: ClassId,
    bucket: Difficulty,
    kind: &IouKind,
    iou_threshold: f64,
    ap_kind: ApKind,
) -> PRCurve {
    // Per-sample ground-truth index lists, deterministic order.
    let mut valid: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut absorbing: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut n_valid = 0usize;
    for (i, gt) in gts.iter().enumerate() {
        if gt.dont_care {
            absorbing.entry(gt.sample).or_default().push(i);
        } else if gt.class == class {
            if bucket.contains(gt) {
                valid.entry(gt.sample).or_default().push(i);
                n_valid += 1;
            } else {
                absorbing.entry(gt.sample).or_default().push(i);
            }
        }
    }
    if n_valid == 0 {
        return PRCurve {
            points: Vec::new(),
            ap: None,
        };
    }

    let mut order: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].class == class).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut matched = vec![false; gts.len()];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut points = Vec::new();
    for &di in &order {
        let det = &dets[di];
        let mut best: Option<(f64, usize)> = None;
        for &gi in valid.get(&det.sample).map(|v| v.as_slice()).unwrap_or(&[]) {
            if matched[gi] {
                continue;
            }
            let iou = kind.overlap(&det.box3d, &gts[gi].box3d);
            if iou >= iou_threshold && best.map_or(true, |(b, _)| iou > b) {
                best = Some((iou, gi));
            }
        }
        if let Some((_, gi)) = best {
            matched[gi] = true;
            tp += 1;
        } else {
            let absorbed = absorbing
                .get(&det.sample)
                .map(|v| v.as_slice())
                .unwrap_or(&[])
                .iter()
                .any(|&gi| kind.overlap(&det.box3d, &gts[gi].box3d) >= iou_threshold);
            if absorbed {
                continue;
            }
            fp += 1;
        }
        points.push((
            tp as f64 / n_valid as f64,
            tp as f64 / (tp + fp) as f64,
        ));
    }

    let ap = match ap_kind {
        ApKind::Eleven => ap_11point(&points),
        ApKind::Forty => ap_40point(&points),
    };
    PRCurve {
        points,
        ap: Some(ap),
    }
}

/// One report row: a class evaluated in one bucket under one overlap kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub class: String,
    pub bucket: Difficulty,
    pub iou_kind: String,
    pub iou_threshold: f64,
    pub ap: Option<f64>,
    pub pr: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub entries: Vec<ReportEntry>,
}

/// Evaluate every class in every bucket under each overlap kind.
pub fn build_report(
    dets: &[Detection],
    gts: &[GroundTruth],
    kinds: &[IouKind],
    ap_kind: ApKind,
) -> EvalReport {
    let mut entries = Vec::new();
    for kind in kinds {
        for class in [ClassId::Car, ClassId::Pedestrian, ClassId::Cyclist] {
            for bucket in Difficulty::ALL {
                let thr = default_iou_threshold(class);
                let curve = evaluate(dets, gts, class, bucket, kind, thr, ap_kind);
                entries.push(ReportEntry {
                    class: class.name().to_string(),
                    bucket,
                    iou_kind: kind.name().to_string(),
                    iou_threshold: thr,
                    ap: curve.ap,
                    pr: curve.points,
                });
            }
        }
    }
    EvalReport { entries }
}

/// Plain-text table: one row per class and overlap kind, one column per
/// bucket. Absent AP prints as a dash.
pub fn report_table(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:<8} {:>9} {:>9} {:>9}\n",
        "class", "iou", "easy", "moderate", "hard"
    ));
    let mut rows: Vec<(String, String)> = Vec::new();
    for e in &report.entries {
        let key = (e.class.clone(), e.iou_kind.clone());
        if !rows.contains(&key) {
            rows.push(key);
        }
    }
    for (class, kind) in rows {
        let mut cells = [String::from("-"), String::from("-"), String::from("-")];
        for e in &report.entries {
            if e.class == class && e.iou_kind == kind {
                if let Some(ap) = e.ap {
                    let idx = Difficulty::ALL.iter().position(|b| *b == e.bucket).unwrap();
                    cells[idx] = format!("{:.4}", ap);
                }
            }
        }
        out.push_str(&format!(
            "{:<12} {:<8} {:>9} {:>9} {:>9}\n",
            class, kind, cells[0], cells[1], cells[2]
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{rotate_about_z, Point3};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_4, PI, TAU};

    fn boxf(cx: f64, cy: f64, w: f64, l: f64, heading: f64) -> Box3D {
        Box3D::new(cx, cy, 0.0, 1.0, w, l, heading)
    }

    #[test]
    fn clip_identical_and_offset_squares() {
        let unit = box_footprint(&boxf(0.0, 0.0, 1.0, 1.0, 0.0));
        let same = clip_polygon(&unit, &unit);
        assert!((polygon_area(&same) - 1.0).abs() < 1e-12);
        let shifted = box_footprint(&boxf(0.5, 0.0, 1.0, 1.0, 0.0));
        assert!((polygon_area(&clip_polygon(&unit, &shifted)) - 0.5).abs() < 1e-12);
        let disjoint = box_footprint(&boxf(5.0, 0.0, 1.0, 1.0, 0.0));
        assert_eq!(polygon_area(&clip_polygon(&unit, &disjoint)), 0.0);
    }

    #[test]
    fn iou_bev_trivial_cases() {
        let a = boxf(1.0, 2.0, 1.5, 4.0, 0.7);
        assert!((iou_bev(&a, &a) - 1.0).abs() < 1e-12);
        let far = boxf(50.0, 2.0, 1.5, 4.0, 0.7);
        assert_eq!(iou_bev(&a, &far), 0.0);
    }

    #[test]
    fn iou_bev_rotated_square_analytic() {
        // Unit square vs itself rotated 45 degrees about the shared center:
        // the intersection is a regular octagon of area 2(sqrt(2)-1), so
        // IoU = (2 sqrt(2) - 2) / (4 - 2 sqrt(2)) = 1/sqrt(2).
        let a = boxf(0.0, 0.0, 1.0, 1.0, 0.0);
        let b = boxf(0.0, 0.0, 1.0, 1.0, FRAC_PI_4);
        let analytic = 0.7071067811865475;
        assert!((iou_bev(&a, &b) - analytic).abs() < 1e-9);

        let inter = bev_intersection_area(&a, &b);
        assert!((inter - 2.0 * (2.0f64.sqrt() - 1.0)).abs() < 1e-9);
    }

    fn in_footprint(b: &Box3D, x: f64, y: f64) -> bool {
        let (s, c) = b.heading.sin_cos();
        let dx = x - b.cx;
        let dy = y - b.cy;
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        lx.abs() <= b.l / 2.0 && ly.abs() <= b.w / 2.0
    }

    fn monte_carlo_iou(a: &Box3D, b: &Box3D, samples: usize, seed: u64) -> f64 {
        let fa = box_footprint(a);
        let fb = box_footprint(b);
        let xs: Vec<f64> = fa.iter().chain(fb.iter()).map(|p| p.0).collect();
        let ys: Vec<f64> = fa.iter().chain(fb.iter()).map(|p| p.1).collect();
        let (x0, x1) = (
            xs.iter().cloned().fold(f64::INFINITY, f64::min),
            xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
        let (y0, y1) = (
            ys.iter().cloned().fold(f64::INFINITY, f64::min),
            ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inter = 0usize;
        let mut union = 0usize;
        for _ in 0..samples {
            let x = rng.random_range(x0..x1);
            let y = rng.random_range(y0..y1);
            let ia = in_footprint(a, x, y);
            let ib = in_footprint(b, x, y);
            if ia && ib {
                inter += 1;
            }
            if ia || ib {
                union += 1;
            }
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    #[test]
    fn monte_carlo_oracle_agrees() {
        // Validate the sampler itself on the analytic 45-degree case, then
        // spot-check random pairs against the exact clipper.
        let a = boxf(0.0, 0.0, 1.0, 1.0, 0.0);
        let b = boxf(0.0, 0.0, 1.0, 1.0, FRAC_PI_4);
        let mc = monte_carlo_iou(&a, &b, 1_000_000, 1);
        assert!((mc - 0.7071067811865475).abs() < 0.01);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..10 {
            let a = boxf(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(0.5..3.0),
                rng.random_range(0.5..5.0),
                rng.random_range(0.0..TAU),
            );
            let b = boxf(
                a.cx + rng.random_range(-2.0..2.0),
                a.cy + rng.random_range(-2.0..2.0),
                rng.random_range(0.5..3.0),
                rng.random_range(0.5..5.0),
                rng.random_range(0.0..TAU),
            );
            let mc = monte_carlo_iou(&a, &b, 1_000_000, 100 + i);
            assert!(
                (mc - iou_bev(&a, &b)).abs() < 0.01,
                "pair {i}: mc {mc} vs exact {}",
                iou_bev(&a, &b)
            );
        }
    }

    #[test]
    fn iou_bev_symmetric_and_rigid_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let a = boxf(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(0.5..3.0),
                rng.random_range(0.5..5.0),
                rng.random_range(0.0..TAU),
            );
            let b = boxf(
                a.cx + rng.random_range(-3.0..3.0),
                a.cy + rng.random_range(-3.0..3.0),
                rng.random_range(0.5..3.0),
                rng.random_range(0.5..5.0),
                rng.random_range(0.0..TAU),
            );
            let iou = iou_bev(&a, &b);
            assert!((0.0..=1.0 + 1e-12).contains(&iou));
            assert!((iou - iou_bev(&b, &a)).abs() < 1e-12);

            let angle = rng.random_range(0.0..TAU);
            let (tx, ty) = (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
            let mv = |bx: &Box3D| {
                let c = rotate_about_z(&Point3::new(bx.cx, bx.cy, 0.0, 0.0), angle);
                Box3D::new(
                    c.x + tx,
                    c.y + ty,
                    bx.cz,
                    bx.h,
                    bx.w,
                    bx.l,
                    bx.heading + angle,
                )
            };
            assert!((iou_bev(&mv(&a), &mv(&b)) - iou).abs() < 1e-9);
            assert!((iou_3d(&mv(&a), &mv(&b)) - iou_3d(&a, &b)).abs() < 1e-9);
        }
    }

    #[test]
    fn iou_3d_algebraic_cases() {
        let a = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-12);
        let lifted = Box3D::new(0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0);
        assert_eq!(iou_3d(&a, &lifted), 0.0);
        let shifted = Box3D::new(0.5, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        assert!((iou_3d(&a, &shifted) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ap_trivial_and_hand_case() {
        // Perfect detector.
        assert!((ap_11point(&[(0.5, 1.0), (1.0, 1.0)]) - 1.0).abs() < 1e-12);
        // No hits at all.
        assert_eq!(ap_11point(&[(0.0, 0.0), (0.0, 0.0)]), 0.0);
        // Hand-enumerated TP, FP, TP over two ground truths.
        let pairs = [(0.5, 1.0), (0.5, 0.5), (1.0, 2.0 / 3.0)];
        assert!((ap_11point(&pairs) - 28.0 / 33.0).abs() < 1e-9);
        assert!((ap_11point(&pairs) - 0.848485).abs() < 1e-6);
    }

    fn easy_gt(sample: usize, class: ClassId, b: Box3D) -> GroundTruth {
        GroundTruth {
            sample,
            class,
            box3d: b,
            truncation: 0.0,
            occlusion: 0,
            box_height_px: 50.0,
            dont_care: false,
        }
    }

    #[test]
    fn evaluate_perfect_detector() {
        let mut gts = Vec::new();
        let mut dets = Vec::new();
        for s in 0..4 {
            let b = boxf(10.0 + s as f64 * 3.0, s as f64, 1.8, 4.2, 0.3);
            gts.push(easy_gt(s, ClassId::Car, b));
            dets.push(Detection {
                sample: s,
                class: ClassId::Car,
                box3d: b,
                score: 0.9,
            });
        }
        for bucket in Difficulty::ALL {
            let curve = evaluate(
                &dets,
                &gts,
                ClassId::Car,
                bucket,
                &IouKind::Bev,
                0.7,
                ApKind::Eleven,
            );
            assert_eq!(curve.ap, Some(1.0));
        }
        // 3D and map-space kinds agree on identical boxes.
        let c3 = evaluate(
            &dets,
            &gts,
            ClassId::Car,
            Difficulty::Easy,
            &IouKind::ThreeD,
            0.7,
            ApKind::Eleven,
        );
        assert_eq!(c3.ap, Some(1.0));
    }

    #[test]
    fn evaluate_out_of_bucket_is_dont_care() {
        let visible = boxf(10.0, 0.0, 1.8, 4.2, 0.0);
        let occluded = boxf(20.0, 5.0, 1.8, 4.2, 0.0);
        let gts = vec![
            easy_gt(0, ClassId::Car, visible),
            GroundTruth {
                occlusion: 2, // hard bucket only
                ..easy_gt(0, ClassId::Car, occluded)
            },
        ];
        let dets = vec![
            Detection {
                sample: 0,
                class: ClassId::Car,
                box3d: visible,
                score: 0.9,
            },
            Detection {
                sample: 0,
                class: ClassId::Car,
                box3d: occluded,
                score: 0.8,
            },
        ];
        // In the easy bucket the occluded gt absorbs its detection: one
        // valid gt, one hit, no misses.
        let easy = evaluate(
            &dets,
            &gts,
            ClassId::Car,
            Difficulty::Easy,
            &IouKind::Bev,
            0.7,
            ApKind::Eleven,
        );
        assert_eq!(easy.ap, Some(1.0));
        assert_eq!(easy.points.len(), 1);
        // In the hard bucket both count.
        let hard = evaluate(
            &dets,
            &gts,
            ClassId::Car,
            Difficulty::Hard,
            &IouKind::Bev,
            0.7,
            ApKind::Eleven,
        );
        assert_eq!(hard.ap, Some(1.0));
        assert_eq!(hard.points.len(), 2);
    }

    #[test]
    fn evaluate_no_gts_reports_absent() {
        let dets = vec![Detection {
            sample: 0,
            class: ClassId::Car,
            box3d: boxf(10.0, 0.0, 1.8, 4.2, 0.0),
            score: 0.9,
        }];
        let curve = evaluate(
            &dets,
            &[],
            ClassId::Car,
            Difficulty::Easy,
            &IouKind::Bev,
            0.7,
            ApKind::Eleven,
        );
        assert_eq!(curve.ap, None);
        assert!(curve.points.is_empty());
    }

    /// Independent reference: same convention, separate code path.
    fn reference_pr(
        dets: &[Detection],
        gts: &[GroundTruth],
        class: ClassId,
        bucket: Difficulty,
        thr: f64,
    ) -> Vec<(f64, f64)> {
        let n_valid = gts
            .iter()
            .filter(|g| g.class == class && !g.dont_care && bucket.contains(g))
            .count();
        if n_valid == 0 {
            return Vec::new();
        }
        let mut order: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].class == class).collect();
        order.sort_by(|&a, &b| {
            dets[b]
                .score
                .partial_cmp(&dets[a].score)
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut taken = vec![false; gts.len()];
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut out = Vec::new();
        for &di in &order {
            let d = &dets[di];
            let mut best_gi = usize::MAX;
            let mut best_iou = thr;
            for (gi, g) in gts.iter().enumerate() {
                if g.sample != d.sample || g.class != class || g.dont_care {
                    continue;
                }
                if !bucket.contains(g) || taken[gi] {
                    continue;
                }
                let iou = iou_bev(&d.box3d, &g.box3d);
                if iou > best_iou || (iou >= thr && best_gi == usize::MAX && iou >= best_iou) {
                    best_iou = iou;
                    best_gi = gi;
                }
            }
            if best_gi != usize::MAX {
                taken[best_gi] = true;
                tp += 1;
            } else {
                let mut absorbed = false;
                for g in gts.iter() {
                    if g.sample != d.sample {
                        continue;
                    }
                    let is_absorbing =
                        g.dont_care || (g.class == class && !bucket.contains(g));
                    if is_absorbing && iou_bev(&d.box3d, &g.box3d) >= thr {
                        absorbed = true;
                        break;
                    }
                }
                if absorbed {
                    continue;
                }
                fp += 1;
            }
            out.push((tp as f64 / n_valid as f64, tp as f64 / (tp + fp) as f64));
        }
        out
    }

    #[test]
    fn evaluate_matches_reference_on_random_scenarios() {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        for trial in 0..10 {
            let mut gts = Vec::new();
            let mut dets = Vec::new();
            for sample in 0..20 {
                for _ in 0..rng.random_range(0..4usize) {
                    let b = boxf(
                        rng.random_range(5.0..40.0),
                        rng.random_range(-10.0..10.0),
                        rng.random_range(1.4..2.0),
                        rng.random_range(3.5..4.5),
                        rng.random_range(0.0..TAU),
                    );
                    gts.push(GroundTruth {
                        sample,
                        class: ClassId::Car,
                        box3d: b,
                        truncation: rng.random_range(0.0..0.6),
                        occlusion: rng.random_range(0..3u8),
                        box_height_px: rng.random_range(15.0..60.0),
                        dont_care: rng.random_range(0.0..1.0) < 0.1,
                    });
                    // Jittered detection of the same object, sometimes.
                    if rng.random_range(0.0..1.0) < 0.8 {
                        let mut jb = b;
                        jb.cx += rng.random_range(-0.5..0.5);
                        jb.cy += rng.random_range(-0.5..0.5);
                        dets.push(Detection {
                            sample,
                            class: ClassId::Car,
                            box3d: jb,
                            score: rng.random_range(0.0..1.0),
                        });
                    }
                }
                // Pure false positives.
                if rng.random_range(0.0..1.0) < 0.5 {
                    dets.push(Detection {
                        sample,
                        class: ClassId::Car,
                        box3d: boxf(
                            rng.random_range(5.0..40.0),
                            rng.random_range(-10.0..10.0),
                            1.8,
                            4.2,
                            0.0,
                        ),
                        score: rng.random_range(0.0..1.0),
                    });
                }
            }
            for bucket in Difficulty::ALL {
                let got = evaluate(
                    &dets,
                    &gts,
                    ClassId::Car,
                    bucket,
                    &IouKind::Bev,
                    0.5,
                    ApKind::Eleven,
                );
                let want = reference_pr(&dets, &gts, ClassId::Car, bucket, 0.5);
                assert_eq!(got.points, want, "trial {trial} bucket {bucket:?}");
            }
        }
    }

    #[test]
    fn ap_monotone_under_new_top_hit() {
        let g0 = boxf(10.0, 0.0, 1.8, 4.2, 0.2);
        let g1 = boxf(20.0, 4.0, 1.8, 4.2, 0.4);
        let gts = vec![easy_gt(0, ClassId::Car, g0), easy_gt(0, ClassId::Car, g1)];
        let dets = vec![
            Detection {
                sample: 0,
                class: ClassId::Car,
                box3d: g0,
                score: 0.6,
            },
            Detection {
                sample: 0,
                class: ClassId::Car,
                box3d: boxf(30.0, -5.0, 1.8, 4.2, 0.0),
                score: 0.5,
            },
        ];
        let before = evaluate(
            &dets,
            &gts,
            ClassId::Car,
            Difficulty::Easy,
            &IouKind::Bev,
            0.7,
            ApKind::Eleven,
        )
        .ap
        .unwrap();
        let mut more = dets.clone();
        more.push(Detection {
            sample: 0,
            class: ClassId::Car,
            box3d: g1,
            score: 0.95,
        });
        let after = evaluate(
            &more,
            &gts,
            ClassId::Car,
            Difficulty::Easy,
            &IouKind::Bev,
            0.7,
            ApKind::Eleven,
        )
        .ap
        .unwrap();
        assert!(after >= before);
    }

    #[test]
    fn ap_40point_perfect_detector() {
        assert!((ap_40point(&[(1.0, 1.0)]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn report_serializes_and_tabulates() {
        let b = boxf(10.0, 0.0, 1.8, 4.2, 0.0);
        let gts = vec![easy_gt(0, ClassId::Car, b)];
        let dets = vec![Detection {
            sample: 0,
            class: ClassId::Car,
            box3d: b,
            score: 0.9,
        }];
        let report = build_report(
            &dets,
            &gts,
            &[IouKind::Bev, IouKind::ThreeD],
            ApKind::Eleven,
        );
        assert_eq!(report.entries.len(), 2 * 3 * 3);
        let json = serde_json::to_string(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        let table = report_table(&report);
        assert!(table.contains("Car"));
        assert!(table.contains("bev"));
        assert!(table.contains("1.0000"));
        assert!(table.contains('-'));
    }
}
