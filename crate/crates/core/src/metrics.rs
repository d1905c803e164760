//! Layout quality metrics: reprojection IoU and precision, depth error,
//! support violation rate, collision count and rotation error.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{self, Point2};
use crate::grid::{GridBox, GridLayout};
use crate::scene::{self, CameraBox, CameraIntrinsics};

/// Fraction of the smaller volume two boxes must share to count as colliding.
pub const COLLISION_FRACTION: f64 = 0.2;
/// Max gap between a bottom and a supporting surface, grid units.
pub const SUPPORT_TOLERANCE: i32 = 1;
/// Min share of the supportee footprint resting on its supporter.
pub const SUPPORT_OVERLAP: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("no matching object ids between prediction and ground truth")]
    NoMatches,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExclusionConfig {
    pub svr_wall_mounted: Vec<String>,
    pub svr_small: Vec<String>,
    pub rot_symmetric: Vec<String>,
}

impl Default for ExclusionConfig {
    fn default() -> Self {
        Self::new(
            &["paintings", "mirrors", "boards", "clocks"],
            &["cups", "bottles", "books", "towels"],
            &["lamps", "round tables", "stools"],
        )
    }
}

impl ExclusionConfig {
    pub fn new(wall: &[&str], small: &[&str], symmetric: &[&str]) -> Self {
        let norm = |v: &[&str]| {
            let mut out: Vec<String> = Vec::new();
            for s in v {
                let s = s.trim().to_lowercase();
                if !s.is_empty() && !out.contains(&s) {
                    out.push(s);
                }
            }
            out
        };
        Self { svr_wall_mounted: norm(wall), svr_small: norm(small), rot_symmetric: norm(symmetric) }
    }

    pub fn svr_excluded(&self, class: &str) -> bool {
        self.svr_wall_mounted.iter().chain(&self.svr_small).any(|e| label_matches(class, e))
    }

    pub fn rot_excluded(&self, class: &str) -> bool {
        self.rot_symmetric.iter().any(|e| label_matches(class, e))
    }
}

fn singular(word: &str) -> String {
    if let Some(stem) = word.strip_suffix("ies") {
        if stem.len() > 1 {
            return format!("{stem}y");
        }
    }
    for suf in ["ches", "shes", "sses", "xes"] {
        if word.ends_with(suf) {
            return word[..word.len() - 2].to_string();
        }
    }
    if word.len() > 3 && word.ends_with('s') && !word.ends_with("ss") {
        return word[..word.len() - 1].to_string();
    }
    word.to_string()
}

fn tokens(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(singular)
        .collect()
}

/// Whether the exclusion phrase occurs in the label as a run of whole words,
/// ignoring case and plural endings ("wall_clock" matches "clocks";
/// "bookshelf" does not match "books").
pub fn label_matches(label: &str, phrase: &str) -> bool {
    let l = tokens(label);
    let p = tokens(phrase);
    !p.is_empty() && l.windows(p.len()).any(|w| w == p.as_slice())
}

/// Intersection over union of two convex polygons; 0 if either is degenerate.
pub fn polygon_iou(a: &[Point2], b: &[Point2]) -> f64 {
    let aa = geom::area(a);
    let ab = geom::area(b);
    if aa <= 0.0 || ab <= 0.0 {
        return 0.0;
    }
    let inter = geom::convex_intersection_area(a, b);
    (inter / (aa + ab - inter)).clamp(0.0, 1.0)
}

/// IoU of two boxes' image silhouettes. A box with a vertex behind the image
/// plane has no silhouette and scores 0.
pub fn box_reproj_iou(pred: &CameraBox, gt: &CameraBox, k: &CameraIntrinsics) -> f64 {
    match (scene::project_box(pred, k), scene::project_box(gt, k)) {
        (Ok(a), Ok(b)) => polygon_iou(&a, &b),
        _ => 0.0,
    }
}

fn id_pairs<'a>(pred: &'a [CameraBox], gt: &'a [CameraBox]) -> Vec<(&'a CameraBox, &'a CameraBox)> {
    let by_id: HashMap<u32, &CameraBox> = gt.iter().map(|b| (b.id, b)).collect();
    pred.iter().filter_map(|p| by_id.get(&p.id).map(|g| (p, *g))).collect()
}

/// Mean IoU over id-matched pairs, plus `(id, iou)` per matched prediction.
pub fn reproj_iou(
    pred: &[CameraBox],
    gt: &[CameraBox],
    k: &CameraIntrinsics,
) -> Result<(f64, Vec<(u32, f64)>), MetricError> {
    let pairs = id_pairs(pred, gt);
    if pairs.is_empty() {
        return Err(MetricError::NoMatches);
    }
    let per: Vec<(u32, f64)> = pairs.iter().map(|(p, g)| (p.id, box_reproj_iou(p, g, k))).collect();
    let mean = per.iter().map(|x| x.1).sum::<f64>() / per.len() as f64;
    Ok((mean, per))
}

/// Matching for predictions without usable ids: maximizes total IoU.
pub fn hungarian_match(pred: &[CameraBox], gt: &[CameraBox], k: &CameraIntrinsics) -> Vec<(usize, usize, f64)> {
    let iou: Vec<Vec<f64>> = pred.iter().map(|p| gt.iter().map(|g| box_reproj_iou(p, g, k)).collect()).collect();
    let cost: Vec<Vec<f64>> = iou.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
    assignment(&cost, pred.len(), gt.len())
        .into_iter()
        .map(|(i, j)| (i, j, iou[i][j]))
        .collect()
}

/// Minimum-cost assignment (Kuhn–Munkres with potentials) on a `rows × cols`
/// matrix; the shorter side is fully matched.
pub fn assignment(cost: &[Vec<f64>], rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let n = rows.max(cols);
    if n == 0 {
        return Vec::new();
    }
    let c = |i: usize, j: usize| if i < rows && j < cols { cost[i][j] } else { 0.0 };
    // 1-based arrays, column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = c(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out: Vec<(usize, usize)> = (1..=n)
        .filter(|&j| p[j] >= 1 && p[j] - 1 < rows && j - 1 < cols)
        .map(|j| (p[j] - 1, j - 1))
        .collect();
    out.sort_unstable();
    out
}

/// Share of predictions whose IoU strictly exceeds `tau`.
pub fn precision_at(ious: &[f64], tau: f64) -> f64 {
    if ious.is_empty() {
        return 0.0;
    }
    ious.iter().filter(|&&x| x > tau).count() as f64 / ious.len() as f64
}

/// Mean absolute difference of center depth over id-matched pairs, meters.
pub fn avg_depth_error(pred: &[CameraBox], gt: &[CameraBox]) -> Result<f64, MetricError> {
    let pairs = id_pairs(pred, gt);
    if pairs.is_empty() {
        return Err(MetricError::NoMatches);
    }
    Ok(pairs.iter().map(|(p, g)| (p.depth() - g.depth()).abs()).sum::<f64>() / pairs.len() as f64)
}

/// Footprint area of `a` that lies over `b`, grid units².
pub fn footprint_overlap(a: &GridBox, b: &GridBox, n_theta: u32) -> f64 {
    geom::convex_intersection_area(&a.footprint(n_theta), &b.footprint(n_theta))
}

/// Whether `b` offers `a` a supporting surface: top within tolerance of
/// `a`'s bottom and at least half of `a`'s footprint over it.
pub fn supports(b: &GridBox, a: &GridBox, n_theta: u32) -> bool {
    if (a.bottom() - b.top()).abs() > SUPPORT_TOLERANCE {
        return false;
    }
    let own = (a.size[0] * a.size[2]) as f64;
    footprint_overlap(a, b, n_theta) >= SUPPORT_OVERLAP * own - 1e-9
}

pub fn is_supported(layout: &GridLayout, i: usize) -> bool {
    let a = &layout.objects[i];
    if a.bottom() <= SUPPORT_TOLERANCE {
        return true;
    }
    let n = layout.n_theta();
    layout.objects.iter().enumerate().any(|(j, b)| j != i && supports(b, a, n))
}

/// Indices of considered objects that lack support.
pub fn unsupported(layout: &GridLayout, excl: &ExclusionConfig) -> Vec<usize> {
    (0..layout.len())
        .filter(|&i| !excl.svr_excluded(&layout.objects[i].class_name) && !is_supported(layout, i))
        .collect()
}

/// Percentage of considered objects without support; 0 if none is considered.
pub fn support_violation_rate(layout: &GridLayout, excl: &ExclusionConfig) -> f64 {
    let considered = layout.objects.iter().filter(|o| !excl.svr_excluded(&o.class_name)).count();
    if considered == 0 {
        return 0.0;
    }
    100.0 * unsupported(layout, excl).len() as f64 / considered as f64
}

fn vertical_overlap(a: &GridBox, b: &GridBox) -> f64 {
    (a.top().min(b.top()) - a.bottom().max(b.bottom())).max(0) as f64
}

/// Exact intersection volume of two yaw-rotated boxes (footprint clip times
/// vertical overlap), grid units³.
pub fn intersection_volume(a: &GridBox, b: &GridBox, n_theta: u32) -> f64 {
    let h = vertical_overlap(a, b);
    if h == 0.0 {
        return 0.0;
    }
    h * footprint_overlap(a, b, n_theta)
}

pub fn collides(a: &GridBox, b: &GridBox, n_theta: u32) -> bool {
    // The clipped area carries rounding noise; an exact tie is not a collision.
    intersection_volume(a, b, n_theta) > COLLISION_FRACTION * a.volume().min(b.volume()) + 1e-9
}

fn pair_key(a: u32, b: u32) -> (u32, u32) {
    (a.min(b), a.max(b))
}

/// Unordered id pairs whose intersection exceeds the collision threshold.
pub fn colliding_pairs(layout: &GridLayout) -> BTreeSet<(u32, u32)> {
    let n = layout.n_theta();
    let mut out = BTreeSet::new();
    for (i, a) in layout.objects.iter().enumerate() {
        for b in &layout.objects[i + 1..] {
            if collides(a, b, n) {
                out.insert(pair_key(a.id, b.id));
            }
        }
    }
    out
}

/// Collisions not already present in `gt_collisions`.
pub fn collision_count(layout: &GridLayout, gt_collisions: Option<&BTreeSet<(u32, u32)>>) -> usize {
    colliding_pairs(layout)
        .into_iter()
        .filter(|p| gt_collisions.is_none_or(|g| !g.contains(p)))
        .count()
}

/// Overlap volume of the boxes' axis-aligned bounds (yaw-aware footprints).
pub fn aabb_overlap_volume(a: &GridBox, b: &GridBox, n_theta: u32) -> f64 {
    let (alo, ahi) = a.aabb(n_theta);
    let (blo, bhi) = b.aabb(n_theta);
    (0..3).map(|k| (ahi[k].min(bhi[k]) - alo[k].max(blo[k])).max(0.0)).product()
}

/// Pairs of indices whose axis-aligned bounds interpenetrate with positive volume.
pub fn aabb_colliding_pairs(layout: &GridLayout) -> Vec<(usize, usize)> {
    let n = layout.n_theta();
    let mut out = Vec::new();
    for i in 0..layout.len() {
        for j in i + 1..layout.len() {
            if aabb_overlap_volume(&layout.objects[i], &layout.objects[j], n) > 1e-9 {
                out.push((i, j));
            }
        }
    }
    out
}

/// Wrapped absolute yaw difference, degrees in [0, 180].
pub fn yaw_difference_deg(a: u32, b: u32, n_theta: u32) -> f64 {
    let step = 360.0 / n_theta as f64;
    let d = ((a as f64 - b as f64) * step).abs() % 360.0;
    d.min(360.0 - d)
}

/// Mean wrapped yaw difference over id-matched, non-symmetric objects.
pub fn rotation_error(pred: &GridLayout, gt: &GridLayout, excl: &ExclusionConfig) -> Result<f64, MetricError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in &pred.objects {
        let Some(g) = gt.get(p.id) else { continue };
        if excl.rot_excluded(&p.class_name) || excl.rot_excluded(&g.class_name) {
            continue;
        }
        sum += yaw_difference_deg(p.yaw_idx, g.yaw_idx, pred.n_theta());
        n += 1;
    }
    if n == 0 {
        return Err(MetricError::NoMatches);
    }
    Ok(sum / n as f64)
}

/// Total L1 grid distance between id-matched positions.
pub fn position_error(pred: &GridLayout, gt: &GridLayout) -> i64 {
    pred.objects
        .iter()
        .filter_map(|p| gt.get(p.id).map(|g| (0..3).map(|k| (p.pos[k] - g.pos[k]).abs() as i64).sum::<i64>()))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(rename = "Reproj. IoU")]
    pub reproj_iou: f64,
    #[serde(rename = "Prec.@(IoU=0.25)")]
    pub prec_at_25: f64,
    #[serde(rename = "Prec.@(IoU=0.5)")]
    pub prec_at_50: f64,
    #[serde(rename = "Avg. DE")]
    pub avg_depth_error: f64,
    #[serde(rename = "SVR")]
    pub svr: f64,
    #[serde(rename = "# Collisions")]
    pub collision_count: f64,
    #[serde(rename = "Rot. Err.")]
    pub rotation_error: f64,
}

pub const REPORT_COLUMNS: [&str; 7] = [
    "Reproj. IoU",
    "Prec.@(IoU=0.25)",
    "Prec.@(IoU=0.5)",
    "Avg. DE",
    "SVR",
    "# Collisions",
    "Rot. Err.",
];

impl MetricReport {
    pub fn values(&self) -> [f64; 7] {
        [
            self.reproj_iou,
            self.prec_at_25,
            self.prec_at_50,
            self.avg_depth_error,
            self.svr,
            self.collision_count,
            self.rotation_error,
        ]
    }

    pub fn from_values(v: [f64; 7]) -> Self {
        Self {
            reproj_iou: v[0],
            prec_at_25: v[1],
            prec_at_50: v[2],
            avg_depth_error: v[3],
            svr: v[4],
            collision_count: v[5],
            rotation_error: v[6],
        }
    }

    /// Field-wise mean; `None` for an empty slice.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let mut acc = [0.0; 7];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        Some(Self::from_values(acc.map(|a| a / reports.len() as f64)))
    }

    pub fn delta(&self, before: &MetricReport) -> MetricReport {
        let a = self.values();
        let b = before.values();
        Self::from_values([0, 1, 2, 3, 4, 5, 6].map(|k| a[k] - b[k]))
    }
}

/// Full report of a predicted grid layout against ground truth. The
/// prediction is decanonicalized through its own frame and offset; the
/// ground truth's own collisions are not counted.
pub fn evaluate(
    pred: &GridLayout,
    gt: &GridLayout,
    gt_camera: &[CameraBox],
    k: &CameraIntrinsics,
    excl: &ExclusionConfig,
) -> Result<MetricReport, MetricError> {
    let pred_camera = pred.to_camera();
    let (iou, per) = reproj_iou(&pred_camera, gt_camera, k)?;
    let ious: Vec<f64> = per.iter().map(|x| x.1).collect();
    let gt_pairs = colliding_pairs(gt);
    Ok(MetricReport {
        reproj_iou: iou,
        prec_at_25: precision_at(&ious, 0.25),
        prec_at_50: precision_at(&ious, 0.5),
        avg_depth_error: avg_depth_error(&pred_camera, gt_camera)?,
        svr: support_violation_rate(pred, excl),
        collision_count: collision_count(pred, Some(&gt_pairs)) as f64,
        // A scene whose objects are all rotationally symmetric has no yaw to get wrong.
        rotation_error: rotation_error(pred, gt, excl).unwrap_or(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridConfig;
    use crate::scene::Vec3;
    use proptest::prelude::*;

    fn gb(id: u32, class: &str, pos: [i32; 3], size: [i32; 3], yaw: u32) -> GridBox {
        GridBox { id, class_name: class.into(), bbox2d: [0; 4], pos, size, yaw_idx: yaw }
    }

    fn layout(objs: Vec<GridBox>) -> GridLayout {
        GridLayout::new(GridConfig::default(), objs)
    }

    fn square(x: f64, y: f64) -> Vec<Point2> {
        vec![[x, y], [x + 1.0, y], [x + 1.0, y + 1.0], [x, y + 1.0]]
    }

    #[test]
    fn polygon_iou_examples() {
        assert_eq!(polygon_iou(&square(0.0, 0.0), &square(0.0, 0.0)), 1.0);
        assert_eq!(polygon_iou(&square(0.0, 0.0), &square(5.0, 0.0)), 0.0);
        assert!((polygon_iou(&square(0.0, 0.0), &square(0.5, 0.0)) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(polygon_iou(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], &square(0.0, 0.0)), 0.0);
    }

    #[test]
    fn precision_examples() {
        let ious = [0.3, 0.6, 0.1];
        assert!((precision_at(&ious, 0.25) - 2.0 / 3.0).abs() < 1e-12);
        assert!((precision_at(&ious, 0.5) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(precision_at(&[1.0, 1.0], 0.25), 1.0);
        assert_eq!(precision_at(&[1.0, 1.0], 0.5), 1.0);
    }

    fn cam(id: u32, center: [f64; 3]) -> CameraBox {
        CameraBox::new(id, "chair", Vec3::from(center), Vec3::repeat(1.0), Vec3::x(), Vec3::z()).unwrap()
    }

    #[test]
    fn reprojection_and_depth() {
        let k = CameraIntrinsics { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0, width: 640, height: 480 };
        let gt = vec![cam(1, [0.0, 0.0, 3.0]), cam(2, [1.0, 0.0, 4.0])];
        let (m, _) = reproj_iou(&gt, &gt, &k).unwrap();
        assert!((m - 1.0).abs() < 1e-12);
        let far = vec![cam(1, [200.0, 0.0, 3.0])];
        assert_eq!(reproj_iou(&far, &gt, &k).unwrap().0, 0.0);
        assert_eq!(reproj_iou(&[cam(9, [0.0, 0.0, 3.0])], &gt, &k), Err(MetricError::NoMatches));

        assert_eq!(avg_depth_error(&gt, &gt).unwrap(), 0.0);
        let deeper = vec![cam(1, [0.0, 0.0, 3.5])];
        assert!((avg_depth_error(&deeper, &gt).unwrap() - 0.5).abs() < 1e-12);
        let lateral = vec![cam(1, [0.7, -0.2, 3.0])];
        assert_eq!(avg_depth_error(&lateral, &gt).unwrap(), 0.0);
        let behind = vec![cam(1, [0.0, 0.0, 0.2])];
        assert_eq!(reproj_iou(&behind, &gt, &k).unwrap().0, 0.0);
    }

    #[test]
    fn hungarian_recovers_permutation() {
        let k = CameraIntrinsics { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0, width: 640, height: 480 };
        let gt = vec![cam(1, [-1.0, 0.0, 4.0]), cam(2, [0.0, 0.0, 4.0]), cam(3, [1.0, 0.0, 4.0])];
        let pred = vec![cam(0, [1.05, 0.0, 4.0]), cam(0, [-0.95, 0.0, 4.0]), cam(0, [0.02, 0.0, 4.0])];
        let m = hungarian_match(&pred, &gt, &k);
        let pairs: Vec<(usize, usize)> = m.iter().map(|x| (x.0, x.1)).collect();
        assert_eq!(pairs, vec![(0, 2), (1, 0), (2, 1)]);
    }

    #[test]
    fn assignment_rectangular() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0]];
        assert_eq!(assignment(&cost, 2, 3), vec![(0, 1), (1, 0)]);
        let tall = vec![vec![1.0], vec![0.0], vec![2.0]];
        assert_eq!(assignment(&tall, 3, 1), vec![(1, 0)]);
    }

    #[test]
    fn svr_examples() {
        let excl = ExclusionConfig::default();
        assert_eq!(support_violation_rate(&layout(vec![gb(0, "chair", [5, 0, 5], [4, 4, 4], 12)]), &excl), 0.0);
        assert_eq!(support_violation_rate(&layout(vec![gb(0, "chair", [5, 5, 5], [4, 4, 4], 12)]), &excl), 100.0);
        // 60% of the supportee footprint over a supporter whose top is 4.
        let l = layout(vec![
            gb(0, "table", [10, 0, 10], [10, 4, 10], 12),
            gb(1, "box", [14, 5, 10], [10, 2, 10], 12),
        ]);
        assert!(is_supported(&l, 1));
        assert_eq!(support_violation_rate(&l, &excl), 0.0);
        // 40% is not enough.
        let l = layout(vec![
            gb(0, "table", [10, 0, 10], [10, 4, 10], 12),
            gb(1, "box", [16, 5, 10], [10, 2, 10], 12),
        ]);
        assert!(!is_supported(&l, 1));
        let wall = layout(vec![gb(0, "wall clock", [5, 20, 5], [3, 3, 1], 12), gb(1, "chair", [5, 0, 9], [2, 2, 2], 12)]);
        assert_eq!(support_violation_rate(&wall, &excl), 0.0);
    }

    #[test]
    fn exclusion_matching() {
        let e = ExclusionConfig::default();
        assert!(e.svr_excluded("Painting"));
        assert!(e.svr_excluded("wall_clock"));
        assert!(e.svr_excluded("coffee cups"));
        assert!(!e.svr_excluded("bookshelf"));
        assert!(!e.svr_excluded("cupboard"));
        assert!(e.rot_excluded("round table"));
        assert!(!e.rot_excluded("table"));
        assert!(e.rot_excluded("floor lamp"));
        let dup = ExclusionConfig::new(&["Mirror", "mirror "], &[], &[]);
        assert_eq!(dup.svr_wall_mounted, vec!["mirror".to_string()]);
    }

    #[test]
    fn collision_examples() {
        let a = gb(0, "a", [10, 0, 10], [10, 10, 10], 12);
        let b = gb(1, "b", [15, 0, 10], [10, 10, 10], 12);
        assert!((intersection_volume(&a, &b, 24) - 500.0).abs() < 1e-9);
        assert_eq!(collision_count(&layout(vec![a.clone(), b.clone()]), None), 1);
        let touching = gb(1, "b", [20, 0, 10], [10, 10, 10], 12);
        assert_eq!(collision_count(&layout(vec![a.clone(), touching]), None), 0);
        let gt: BTreeSet<_> = [(0, 1)].into_iter().collect();
        assert_eq!(collision_count(&layout(vec![a, b]), Some(&gt)), 0);
    }

    #[test]
    fn rotation_examples() {
        let excl = ExclusionConfig::default();
        // 10-degree bins: index 17 is -10 (350) degrees, 19 is 10 degrees.
        let cfg = GridConfig { n_theta: 36, ..Default::default() };
        let p = GridLayout::new(cfg.clone(), vec![gb(0, "sofa", [0; 3], [1; 3], 17)]);
        let g = GridLayout::new(cfg, vec![gb(0, "sofa", [0; 3], [1; 3], 19)]);
        assert!((rotation_error(&p, &g, &excl).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(yaw_difference_deg(0, 12, 24), 180.0);
        assert_eq!(rotation_error(&p, &p, &excl).unwrap(), 0.0);
        let sym = layout(vec![gb(0, "stool", [0; 3], [1; 3], 3)]);
        assert_eq!(rotation_error(&sym, &sym, &excl), Err(MetricError::NoMatches));
    }

    #[test]
    fn report_serializes_with_table_columns() {
        let r = MetricReport { svr: 12.5, ..Default::default() };
        let v = serde_json::to_value(r).unwrap();
        for c in REPORT_COLUMNS {
            assert!(v.get(c).is_some(), "{c}");
        }
        assert_eq!(v["SVR"], 12.5);
    }

    fn arb_box(id: u32) -> impl Strategy<Value = GridBox> {
        (prop::array::uniform3(0i32..30), prop::array::uniform3(1i32..10), 0u32..24)
            .prop_map(move |(pos, size, yaw)| gb(id, "thing", pos, size, yaw))
    }

    fn arb_layout() -> impl Strategy<Value = GridLayout> {
        (1usize..7).prop_flat_map(|n| {
            (0..n as u32).map(arb_box).collect::<Vec<_>>()
        })
        .prop_map(layout)
    }

    proptest! {
        #[test]
        fn svr_invariant_under_horizontal_shift(l in arb_layout(), dx in -5i32..5, dz in -5i32..5) {
            let mut m = l.clone();
            for o in &mut m.objects {
                o.pos[0] += dx;
                o.pos[2] += dz;
            }
            let e = ExclusionConfig::default();
            prop_assert_eq!(support_violation_rate(&l, &e), support_violation_rate(&m, &e));
        }

        #[test]
        fn collisions_invariant_under_translation_and_relabel(l in arb_layout(), d in prop::array::uniform3(-5i32..5)) {
            let mut m = l.clone();
            for o in &mut m.objects {
                for k in 0..3 {
                    o.pos[k] += d[k];
                }
                o.id += 100;
            }
            prop_assert_eq!(collision_count(&l, None), collision_count(&m, None));
        }

        #[test]
        fn rotation_error_symmetric(a in arb_layout(), yaws in prop::collection::vec(0u32..24, 7)) {
            let mut b = a.clone();
            for (o, y) in b.objects.iter_mut().zip(yaws) {
                o.yaw_idx = y;
            }
            let e = ExclusionConfig::default();
            prop_assert_eq!(rotation_error(&a, &b, &e), rotation_error(&b, &a, &e));
        }

        #[test]
        fn precision_monotone(ious in prop::collection::vec(0.0f64..1.0, 1..20), t1 in 0.01f64..0.99, t2 in 0.01f64..0.99) {
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(precision_at(&ious, hi) <= precision_at(&ious, lo));
        }

        #[test]
        fn polygon_iou_symmetric_and_bounded(x in -2.0f64..2.0, y in -2.0f64..2.0, t in 0.0f64..3.0) {
            let a = geom::oriented_rect([0.0, 0.0], 2.0, 1.0, [t.cos(), t.sin()]);
            let b = geom::oriented_rect([x, y], 1.5, 1.5, [1.0, 0.0]);
            let ab = polygon_iou(&a, &b);
            prop_assert!((ab - polygon_iou(&b, &a)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }
}
