//! Camera-space boxes and their gravity-aligned canonical form.
//!
//! Camera coordinates follow the detector output convention: component 0 is
//! `u` (image right), component 1 is `v` (image down) and component 2 is the
//! depth `x` (away from the camera). A box carries two bottom-face axes; the
//! third axis is `ax_x × ax_z`, which points up for an upright box.
//!
//! The canonical frame has rows `(x, y, z)` with `y` the estimated up
//! direction, `x` the camera right axis projected off `y`, and `z = x × y`.
//! Canonical boxes are anchored at their bottom face: `pos.y` is the bottom
//! height, `pos.x`/`pos.z` the footprint center.

use nalgebra::{DMatrix, Matrix3, Vector3};
use thiserror::Error;

use crate::geom::{self, Point2};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Largest Gram–Schmidt correction accepted when orthonormalizing box axes.
pub const MAX_AXIS_CORRECTION_DEG: f64 = 10.0;
/// Vertices closer to the image plane than this cannot be projected.
pub const MIN_DEPTH: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("degenerate box axes: {0}")]
    DegenerateAxes(String),
    #[error("scene has no boxes")]
    EmptyScene,
    #[error("gravity and camera right axis are (nearly) parallel")]
    DegenerateFrame,
    #[error("object {id} maps to negative grid index on axis {axis}")]
    NegativeIndex { id: u32, axis: usize },
    #[error("box {0} has a vertex at or behind the image plane")]
    BehindCamera(u32),
    #[error("box {id} has non-positive size {size:?}")]
    InvalidSize { id: u32, size: [f64; 3] },
    #[error("invalid grid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn project(&self, p: &Vec3) -> Point2 {
        [self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraBox {
    pub id: u32,
    pub class_name: String,
    pub center: Vec3,
    /// `(w, h, l)` along `ax_x`, `ax_y`, `ax_z`.
    pub size: Vec3,
    pub ax_x: Vec3,
    pub ax_z: Vec3,
}

impl CameraBox {
    /// Validates sizes and orthonormalizes the axes (`ax_z` is corrected
    /// against `ax_x`), rejecting corrections above [`MAX_AXIS_CORRECTION_DEG`].
    pub fn new(
        id: u32,
        class_name: impl Into<String>,
        center: Vec3,
        size: Vec3,
        ax_x: Vec3,
        ax_z: Vec3,
    ) -> Result<Self, SceneError> {
        if !(size.iter().all(|s| s.is_finite() && *s > 0.0)) {
            return Err(SceneError::InvalidSize { id, size: [size[0], size[1], size[2]] });
        }
        if !center.iter().all(|c| c.is_finite()) {
            return Err(SceneError::DegenerateAxes(format!("box {id}: non-finite center")));
        }
        let (ax_x, ax_z) = orthonormalize_axes(&ax_x, &ax_z)
            .map_err(|e| SceneError::DegenerateAxes(format!("box {id}: {e}")))?;
        Ok(Self { id, class_name: class_name.into(), center, size, ax_x, ax_z })
    }

    pub fn ax_y(&self) -> Vec3 {
        self.ax_x.cross(&self.ax_z)
    }

    pub fn depth(&self) -> f64 {
        self.center[2]
    }

    /// The 8 corners, ordered by sign pattern `(±x, ±y, ±z)` with x slowest.
    pub fn vertices(&self) -> [Vec3; 8] {
        let hx = self.ax_x * (0.5 * self.size[0]);
        let hy = self.ax_y() * (0.5 * self.size[1]);
        let hz = self.ax_z * (0.5 * self.size[2]);
        let mut out = [Vec3::zeros(); 8];
        let mut k = 0;
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    out[k] = self.center + hx * sx + hy * sy + hz * sz;
                    k += 1;
                }
            }
        }
        out
    }

    /// Whether a camera-space point lies inside the box.
    pub fn contains(&self, p: &Vec3) -> bool {
        let d = p - self.center;
        let axes = [self.ax_x, self.ax_y(), self.ax_z];
        (0..3).all(|k| d.dot(&axes[k]).abs() <= 0.5 * self.size[k])
    }
}

fn orthonormalize_axes(ax_x: &Vec3, ax_z: &Vec3) -> Result<(Vec3, Vec3), String> {
    let nx = ax_x.norm();
    let nz = ax_z.norm();
    if !(nx.is_finite() && nz.is_finite()) || nx < 1e-9 || nz < 1e-9 {
        return Err("zero or non-finite axis".into());
    }
    let x = ax_x / nx;
    let z0 = ax_z / nz;
    let z = z0 - x * x.dot(&z0);
    let zn = z.norm();
    if zn < 1e-6 {
        return Err("x_axis and z_axis are parallel".into());
    }
    let z = z / zn;
    let correction = z.dot(&z0).clamp(-1.0, 1.0).acos().to_degrees();
    if correction > MAX_AXIS_CORRECTION_DEG {
        return Err(format!("axes are {correction:.1} degrees from orthogonal"));
    }
    Ok((x, z))
}

/// Bottom-face normal of a box: `ax_x × ax_z`, renormalized.
pub fn up_axis(ax_x: &Vec3, ax_z: &Vec3) -> Result<Vec3, SceneError> {
    let c = ax_x.cross(ax_z);
    let n = c.norm();
    if !n.is_finite() || n < 1e-6 {
        return Err(SceneError::DegenerateAxes("axes are parallel".into()));
    }
    Ok(c / n)
}

/// Dominant direction of the stacked bottom-face normals (first right
/// singular vector), signed to agree with their mean.
pub fn estimate_gravity(boxes: &[CameraBox]) -> Result<Vec3, SceneError> {
    if boxes.is_empty() {
        return Err(SceneError::EmptyScene);
    }
    let normals = boxes
        .iter()
        .map(|b| up_axis(&b.ax_x, &b.ax_z))
        .collect::<Result<Vec<_>, _>>()?;
    let stacked = DMatrix::from_fn(normals.len(), 3, |r, c| normals[r][c]);
    let svd = stacked.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| SceneError::DegenerateAxes("SVD failed".into()))?;
    let best = svd
        .singular_values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut g = Vec3::new(v_t[(best, 0)], v_t[(best, 1)], v_t[(best, 2)]).normalize();
    let mean: Vec3 = normals.iter().sum::<Vec3>() / normals.len() as f64;
    if g.dot(&mean) < 0.0 {
        g = -g;
    }
    Ok(g)
}

/// Rotation whose rows are the gravity-aligned axes `(x, y, z)`.
pub fn build_frame(gravity: &Vec3, cam_right: &Vec3) -> Result<Mat3, SceneError> {
    let y = gravity.normalize();
    let r = cam_right.normalize();
    if y.dot(&r).abs() >= 0.99 {
        return Err(SceneError::DegenerateFrame);
    }
    let x = (r - y * y.dot(&r)).normalize();
    let z = x.cross(&y);
    Ok(Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalBox {
    pub id: u32,
    pub class_name: String,
    /// Footprint center in x/z, bottom height in y. Meters.
    pub pos: Vec3,
    /// `(w, h, l)`, meters.
    pub size: Vec3,
    /// Rotation of the box x-axis about the frame y-axis, in `[-π, π)`.
    pub yaw: f64,
}

impl CanonicalBox {
    pub fn center(&self) -> Vec3 {
        Vec3::new(self.pos[0], self.pos[1] + 0.5 * self.size[1], self.pos[2])
    }
}

/// Output of [`canonicalize`]: `canonical = frame * camera + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct Canonicalized {
    pub boxes: Vec<CanonicalBox>,
    pub frame: Mat3,
    pub offset: Vec3,
}

pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    let mut t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t >= PI {
        t -= 2.0 * PI;
    }
    t
}

/// Canonical box x-axis for a yaw: `(cos θ, 0, −sin θ)`.
pub fn yaw_axis_x(yaw: f64) -> Vec3 {
    Vec3::new(yaw.cos(), 0.0, -yaw.sin())
}

/// Canonical box z-axis for a yaw, such that `ax_x × ax_z` is `+y`.
pub fn yaw_axis_z(yaw: f64) -> Vec3 {
    Vec3::new(-yaw.sin(), 0.0, -yaw.cos())
}

pub fn canonicalize(boxes: &[CameraBox]) -> Result<Canonicalized, SceneError> {
    let gravity = estimate_gravity(boxes)?;
    let frame = build_frame(&gravity, &Vec3::x())?;

    let mut rotated = Vec::with_capacity(boxes.len());
    for b in boxes {
        let axes = [frame * b.ax_x, frame * b.ax_y(), frame * b.ax_z];
        // The local axis closest to vertical carries the height.
        let vertical = (0..3)
            .max_by(|&i, &j| axes[i][1].abs().total_cmp(&axes[j][1].abs()))
            .unwrap_or(1);
        let (kw, kl) = match vertical {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let a = axes[kw];
        let yaw = wrap_angle((-a[2]).atan2(a[0]));
        let c = frame * b.center;
        let size = Vec3::new(b.size[kw], b.size[vertical], b.size[kl]);
        rotated.push((b, c, size, yaw));
    }

    let min_bottom = rotated
        .iter()
        .map(|(_, c, s, _)| c[1] - 0.5 * s[1])
        .fold(f64::INFINITY, f64::min);
    let n = rotated.len() as f64;
    let mean_x = rotated.iter().map(|(_, c, _, _)| c[0]).sum::<f64>() / n;
    let mean_z = rotated.iter().map(|(_, c, _, _)| c[2]).sum::<f64>() / n;
    let offset = Vec3::new(-mean_x, -min_bottom, -mean_z);

    let boxes = rotated
        .into_iter()
        .map(|(b, c, size, yaw)| {
            let center = c + offset;
            CanonicalBox {
                id: b.id,
                class_name: b.class_name.clone(),
                pos: Vec3::new(center[0], center[1] - 0.5 * size[1], center[2]),
                size,
                yaw,
            }
        })
        .collect();
    Ok(Canonicalized { boxes, frame, offset })
}

/// Inverse of [`canonicalize`] for a given frame and offset.
pub fn decanonicalize(layout: &[CanonicalBox], frame: &Mat3, offset: &Vec3) -> Vec<CameraBox> {
    let inv = frame.transpose();
    layout
        .iter()
        .map(|b| {
            let center = inv * (b.center() - offset);
            CameraBox {
                id: b.id,
                class_name: b.class_name.clone(),
                center,
                size: b.size,
                ax_x: inv * yaw_axis_x(b.yaw),
                ax_z: inv * yaw_axis_z(b.yaw),
            }
        })
        .collect()
}

/// Perspective silhouette of a box: convex hull of its projected corners,
/// counterclockwise, in pixels.
pub fn project_box(b: &CameraBox, k: &CameraIntrinsics) -> Result<Vec<Point2>, SceneError> {
    let verts = b.vertices();
    if verts.iter().any(|v| v[2] <= MIN_DEPTH) {
        return Err(SceneError::BehindCamera(b.id));
    }
    let pts: Vec<Point2> = verts.iter().map(|v| k.project(v)).collect();
    Ok(geom::ensure_ccw(geom::convex_hull(&pts)))
}

/// Symmetric Hausdorff distance between the corner sets of two boxes.
pub fn vertex_deviation(a: &CameraBox, b: &CameraBox) -> f64 {
    let va = a.vertices();
    let vb = b.vertices();
    let one_way = |p: &[Vec3; 8], q: &[Vec3; 8]| {
        p.iter()
            .map(|x| q.iter().map(|y| (x - y).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    one_way(&va, &vb).max(one_way(&vb, &va))
}
