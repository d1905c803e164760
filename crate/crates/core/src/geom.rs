//! Planar polygon helpers shared by projection, reprojection IoU, support
//! tests and prism intersection.
//!
//! Polygons are plain vertex lists. Convex polygons produced here are
//! counterclockwise in the usual mathematical sense (positive shoelace area),
//! whatever the handedness of the coordinates they live in.

pub type Point2 = [f64; 2];

/// Signed shoelace area. Positive for counterclockwise vertex order.
pub fn signed_area(poly: &[Point2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * acc
}

pub fn area(poly: &[Point2]) -> f64 {
    signed_area(poly).abs()
}

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex hull by Andrew's monotone chain, counterclockwise, collinear points dropped.
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup_by(|a, b| a[0] == b[0] && a[1] == b[1]);
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point2> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point2> = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Returns the polygon in counterclockwise order.
pub fn ensure_ccw(mut poly: Vec<Point2>) -> Vec<Point2> {
    if signed_area(&poly) < 0.0 {
        poly.reverse();
    }
    poly
}

/// Sutherland–Hodgman: clips `subject` against the convex, counterclockwise `clip`.
pub fn clip_convex(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    if subject.len() < 3 || clip.len() < 3 {
        return Vec::new();
    }
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let s = input[j];
            let e = input[(j + 1) % input.len()];
            let ds = cross(a, b, s);
            let de = cross(a, b, e);
            let s_in = ds >= 0.0;
            let e_in = de >= 0.0;
            if e_in {
                if !s_in {
                    output.push(lerp_at(s, e, ds, de));
                }
                output.push(e);
            } else if s_in {
                output.push(lerp_at(s, e, ds, de));
            }
        }
    }
    output
}

fn lerp_at(s: Point2, e: Point2, ds: f64, de: f64) -> Point2 {
    let denom = ds - de;
    if denom.abs() < 1e-300 {
        return s;
    }
    let t = ds / denom;
    [s[0] + (e[0] - s[0]) * t, s[1] + (e[1] - s[1]) * t]
}

/// Intersection area of two convex polygons (any orientation).
pub fn convex_intersection_area(a: &[Point2], b: &[Point2]) -> f64 {
    if a.len() < 3 || b.len() < 3 {
        return 0.0;
    }
    let a = ensure_ccw(a.to_vec());
    let b = ensure_ccw(b.to_vec());
    area(&clip_convex(&a, &b))
}

/// Axis-aligned bounds `(min, max)` of a point set.
pub fn bounds(points: &[Point2]) -> (Point2, Point2) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

/// Rectangle of extents `(w, l)` centered at `center`, with its local first
/// axis rotated to `(cos, sin)`. Counterclockwise.
pub fn oriented_rect(center: Point2, w: f64, l: f64, dir: Point2) -> Vec<Point2> {
    let (hw, hl) = (0.5 * w, 0.5 * l);
    let u = [dir[0] * hw, dir[1] * hw];
    let v = [-dir[1] * hl, dir[0] * hl];
    ensure_ccw(vec![
        [center[0] - u[0] - v[0], center[1] - u[1] - v[1]],
        [center[0] + u[0] - v[0], center[1] + u[1] - v[1]],
        [center[0] + u[0] + v[0], center[1] + u[1] + v[1]],
        [center[0] - u[0] + v[0], center[1] - u[1] + v[1]],
    ])
}
