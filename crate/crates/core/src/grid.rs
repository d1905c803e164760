//! Integer grid layouts: discretization of canonical boxes, its inverse, and
//! the on-disk grid layout format.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::geom::{self, Point2};
use crate::scene::{
    self, CameraBox, CameraIntrinsics, CanonicalBox, Mat3, SceneError, Vec3,
};

pub const DEFAULT_DELTA: f64 = 0.1;
pub const DEFAULT_N_THETA: u32 = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Cell size in meters.
    pub delta: f64,
    /// Number of yaw bins.
    pub n_theta: u32,
    /// Continuous coordinate of grid index 0, meters.
    pub offset: [f64; 3],
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { delta: DEFAULT_DELTA, n_theta: DEFAULT_N_THETA, offset: [0.0; 3] }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(SceneError::InvalidConfig(format!("cell size {} must be > 0", self.delta)));
        }
        if self.n_theta < 4 || self.n_theta % 2 != 0 {
            return Err(SceneError::InvalidConfig(format!(
                "yaw bins {} must be even and >= 4",
                self.n_theta
            )));
        }
        Ok(())
    }

    pub fn yaw_step(&self) -> f64 {
        2.0 * PI / self.n_theta as f64
    }

    /// Offset putting the smallest horizontal coordinate one cell above index
    /// 0. The vertical offset stays at the ground plane so `gy = 0` is the floor.
    pub fn auto_offset(boxes: &[CanonicalBox], delta: f64) -> [f64; 3] {
        let min_x = boxes.iter().map(|b| b.pos[0]).fold(f64::INFINITY, f64::min);
        let min_z = boxes.iter().map(|b| b.pos[2]).fold(f64::INFINITY, f64::min);
        if !min_x.is_finite() {
            return [0.0; 3];
        }
        [min_x - delta, 0.0, min_z - delta]
    }
}

pub fn yaw_radians(yaw_idx: u32, n_theta: u32) -> f64 {
    yaw_idx as f64 * (2.0 * PI / n_theta as f64) - PI
}

pub fn yaw_index(theta: f64, n_theta: u32) -> u32 {
    let step = 2.0 * PI / n_theta as f64;
    ((theta + PI) / step).round().rem_euclid(n_theta as f64) as u32
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridBox {
    pub id: u32,
    #[serde(rename = "class")]
    pub class_name: String,
    /// `[x1, y1, x2, y2]` in image coordinates normalized to 0–1000.
    pub bbox2d: [i32; 4],
    /// Footprint center in x/z and bottom in y, grid units.
    pub pos: [i32; 3],
    /// `[w, h, l]`, grid units, each >= 1.
    pub size: [i32; 3],
    #[serde(rename = "yaw")]
    pub yaw_idx: u32,
}

impl GridBox {
    pub fn bottom(&self) -> i32 {
        self.pos[1]
    }

    pub fn top(&self) -> i32 {
        self.pos[1] + self.size[1]
    }

    pub fn volume(&self) -> f64 {
        self.size.iter().map(|&s| s as f64).product()
    }

    /// Yaw-aware footprint in the XZ plane, grid units, counterclockwise.
    pub fn footprint(&self, n_theta: u32) -> Vec<Point2> {
        let theta = yaw_radians(self.yaw_idx, n_theta);
        geom::oriented_rect(
            [self.pos[0] as f64, self.pos[2] as f64],
            self.size[0] as f64,
            self.size[2] as f64,
            [theta.cos(), -theta.sin()],
        )
    }

    /// Axis-aligned bounds `(min, max)` of the yaw-aware box, grid units.
    pub fn aabb(&self, n_theta: u32) -> ([f64; 3], [f64; 3]) {
        let (lo, hi) = geom::bounds(&self.footprint(n_theta));
        (
            [lo[0], self.bottom() as f64, lo[1]],
            [hi[0], self.top() as f64, hi[1]],
        )
    }
}

/// A grid-discretized scene. `frame` (row-major) and `config.offset` map grid
/// coordinates back to camera space: `camera = frameᵀ · (g·δ + offset)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLayout {
    pub config: GridConfig,
    pub frame: [f64; 9],
    pub objects: Vec<GridBox>,
}

impl GridLayout {
    pub fn new(config: GridConfig, objects: Vec<GridBox>) -> Self {
        Self { config, frame: identity_frame(), objects }
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn n_theta(&self) -> u32 {
        self.config.n_theta
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    pub fn get(&self, id: u32) -> Option<&GridBox> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn frame_matrix(&self) -> Mat3 {
        Mat3::from_row_slice(&self.frame)
    }

    /// Continuous boxes in the frame-rotated coordinates the offset refers to.
    pub fn to_canonical(&self) -> Vec<CanonicalBox> {
        undiscretize(&self.objects, &self.config)
    }

    pub fn to_camera(&self) -> Vec<CameraBox> {
        scene::decanonicalize(&self.to_canonical(), &self.frame_matrix(), &Vec3::zeros())
    }

    /// Structural sanity: size >= 1, pos.y >= 0, yaw in range, unique ids.
    pub fn check(&self) -> Result<(), String> {
        self.config.validate().map_err(|e| e.to_string())?;
        let mut seen = std::collections::HashSet::new();
        for o in &self.objects {
            if !seen.insert(o.id) {
                return Err(format!("duplicate object id {}", o.id));
            }
            if o.size.iter().any(|&s| s < 1) {
                return Err(format!("object {} has size {:?}", o.id, o.size));
            }
            if o.pos[1] < 0 {
                return Err(format!("object {} is below ground", o.id));
            }
            if o.yaw_idx >= self.config.n_theta {
                return Err(format!("object {} has yaw index {}", o.id, o.yaw_idx));
            }
        }
        Ok(())
    }
}

pub fn identity_frame() -> [f64; 9] {
    [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
}

/// `g = round((v − o)/δ)` per coordinate, sizes `max(1, round(s/δ))`, yaw into
/// `N_θ` bins. `bbox2d` is left zeroed.
pub fn discretize(layout: &[CanonicalBox], cfg: &GridConfig) -> Result<Vec<GridBox>, SceneError> {
    cfg.validate()?;
    layout
        .iter()
        .map(|b| {
            let mut pos = [0i32; 3];
            for k in 0..3 {
                let g = ((b.pos[k] - cfg.offset[k]) / cfg.delta).round();
                if g < 0.0 {
                    return Err(SceneError::NegativeIndex { id: b.id, axis: k });
                }
                pos[k] = g as i32;
            }
            let size = [0, 1, 2].map(|k| ((b.size[k] / cfg.delta).round() as i32).max(1));
            Ok(GridBox {
                id: b.id,
                class_name: b.class_name.clone(),
                bbox2d: [0; 4],
                pos,
                size,
                yaw_idx: yaw_index(b.yaw, cfg.n_theta),
            })
        })
        .collect()
}

/// Cell-center reconstruction `v = g·δ + o`.
pub fn undiscretize(grid: &[GridBox], cfg: &GridConfig) -> Vec<CanonicalBox> {
    grid.iter()
        .map(|g| CanonicalBox {
            id: g.id,
            class_name: g.class_name.clone(),
            pos: Vec3::from_fn(|k, _| g.pos[k] as f64 * cfg.delta + cfg.offset[k]),
            size: Vec3::from_fn(|k, _| g.size[k] as f64 * cfg.delta),
            yaw: yaw_radians(g.yaw_idx, cfg.n_theta),
        })
        .collect()
}

/// Normalized (0–1000) image bounds of a box's projection.
pub fn bbox2d(b: &CameraBox, k: &CameraIntrinsics) -> [i32; 4] {
    match scene::project_box(b, k) {
        Ok(poly) => {
            let (lo, hi) = geom::bounds(&poly);
            let nx = |x: f64| ((x * 1000.0 / k.width as f64).round().clamp(0.0, 1000.0)) as i32;
            let ny = |y: f64| ((y * 1000.0 / k.height as f64).round().clamp(0.0, 1000.0)) as i32;
            [nx(lo[0]), ny(lo[1]), nx(hi[0]), ny(hi[1])]
        }
        Err(_) => [0; 4],
    }
}

/// Full pipeline: canonicalize, pick the scene offset, discretize, and attach
/// 2D boxes. The stored offset absorbs the canonical translation so the
/// layout alone decanonicalizes.
pub fn build_grid_layout(
    boxes: &[CameraBox],
    intrinsics: &CameraIntrinsics,
    delta: f64,
    n_theta: u32,
) -> Result<GridLayout, SceneError> {
    let canon = scene::canonicalize(boxes)?;
    let offset = GridConfig::auto_offset(&canon.boxes, delta);
    let cfg = GridConfig { delta, n_theta, offset };
    let mut objects = discretize(&canon.boxes, &cfg)?;
    for (obj, b) in objects.iter_mut().zip(boxes) {
        obj.bbox2d = bbox2d(b, intrinsics);
    }
    let stored = GridConfig {
        offset: [0, 1, 2].map(|k| offset[k] - canon.offset[k]),
        ..cfg
    };
    let f = canon.frame;
    Ok(GridLayout {
        config: stored,
        frame: [f[(0, 0)], f[(0, 1)], f[(0, 2)], f[(1, 0)], f[(1, 1)], f[(1, 2)], f[(2, 0)], f[(2, 1)], f[(2, 2)]],
        objects,
    })
}
