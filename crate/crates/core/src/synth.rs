//! Random scene generators: plausible grid layouts with known contact graphs,
//! the camera-space scenes they project to, and free-form camera scenes.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::assembly::{ContactGraph, Relation};
use crate::grid::{self, GridBox, GridConfig, GridLayout};
use crate::scene::{self, CameraBox, CameraIntrinsics, CanonicalBox, Mat3, Vec3};

const FLOOR_CLASSES: &[&str] = &["bed", "cabinet", "desk", "sofa", "table", "dresser", "shelf", "round table", "stool", "chair"];
const CHILD_CLASSES: &[&str] = &["lamp", "monitor", "box", "plant", "tv", "basket"];
const TOP_CLASSES: &[&str] = &["books", "cups", "vase", "speaker"];
const WALL_CLASSES: &[&str] = &["painting", "mirror", "clock", "board"];

/// Floor footprints stay inside this horizontal window (grid units); wall
/// items hang at the far edge, out of reach of the furniture.
const FLOOR_RANGE: (i32, i32) = (12, 72);
const WALL_Z: i32 = 4;
const WALL_MIN_Y: i32 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    /// Chance that a new object is stacked on an existing one.
    pub p_stacked: f64,
    pub p_wall: f64,
    pub grid: GridConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { min_objects: 3, max_objects: 10, p_stacked: 0.35, p_wall: 0.1, grid: GridConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub layout: GridLayout,
    pub graph: ContactGraph,
}

fn quarter_yaw(rng: &mut impl Rng, n_theta: u32) -> u32 {
    rng.random_range(0..4) * (n_theta / 4)
}

fn aabb_gap(a: &GridBox, b: &GridBox, n_theta: u32) -> f64 {
    let (alo, ahi) = a.aabb(n_theta);
    let (blo, bhi) = b.aabb(n_theta);
    let gx = (blo[0] - ahi[0]).max(alo[0] - bhi[0]);
    let gz = (blo[2] - ahi[2]).max(alo[2] - bhi[2]);
    gx.max(gz)
}

fn pick<'a>(rng: &mut impl Rng, v: &[&'a str]) -> &'a str {
    v[rng.random_range(0..v.len())]
}

/// A clean scene: floor furniture with disjoint footprints, at most one
/// object stacked on each supporter (footprint at most half the supporter's
/// smaller side, so it stays supported under any yaw), and wall items hung
/// well above everything else. Objects are listed in random order.
pub fn grid_scene(rng: &mut impl Rng, cfg: &SynthConfig) -> SynthScene {
    let n_theta = cfg.grid.n_theta;
    let target = rng.random_range(cfg.min_objects..=cfg.max_objects.max(cfg.min_objects));
    let mut objs: Vec<GridBox> = Vec::new();
    let mut rel: Vec<Relation> = Vec::new();
    let mut depth: Vec<u8> = Vec::new();
    let mut has_child: Vec<bool> = Vec::new();
    let mut wall_x: Vec<(i32, i32)> = Vec::new();

    let mut attempts = 0;
    while objs.len() < target && attempts < 400 {
        attempts += 1;
        let id = objs.len() as u32;
        let roll: f64 = rng.random();
        if roll < cfg.p_wall {
            let w = rng.random_range(2..=6);
            let x = rng.random_range(FLOOR_RANGE.0..=FLOOR_RANGE.1);
            if wall_x.iter().any(|&(cx, cw)| (cx - x).abs() < (cw + w) / 2 + 16) {
                continue;
            }
            wall_x.push((x, w));
            objs.push(GridBox {
                id,
                class_name: pick(rng, WALL_CLASSES).into(),
                bbox2d: [0; 4],
                pos: [x, rng.random_range(WALL_MIN_Y..=WALL_MIN_Y + 6), WALL_Z],
                size: [w, rng.random_range(2..=5), 1],
                yaw_idx: n_theta / 2,
            });
            rel.push(Relation::Free);
            depth.push(0);
            has_child.push(true);
            continue;
        }
        if roll < cfg.p_wall + cfg.p_stacked {
            let hosts: Vec<usize> = (0..objs.len())
                .filter(|&i| !has_child[i] && depth[i] < 2 && rel[i] != Relation::Free && objs[i].size[0].min(objs[i].size[2]) >= 4)
                .collect();
            if let Some(&p) = hosts.get(rng.random_range(0..hosts.len().max(1))) {
                let parent = objs[p].clone();
                let half = parent.size[0].min(parent.size[2]) / 2;
                let jitter = (half / 4).max(0);
                let h_max = if depth[p] == 0 { 4 } else { 3 };
                objs.push(GridBox {
                    id,
                    class_name: pick(rng, if depth[p] == 0 { CHILD_CLASSES } else { TOP_CLASSES }).into(),
                    bbox2d: [0; 4],
                    pos: [
                        parent.pos[0] + rng.random_range(-jitter..=jitter),
                        parent.top(),
                        parent.pos[2] + rng.random_range(-jitter..=jitter),
                    ],
                    size: [rng.random_range(1..=half), rng.random_range(1..=h_max), rng.random_range(1..=half)],
                    yaw_idx: quarter_yaw(rng, n_theta),
                });
                rel.push(Relation::On(parent.id));
                depth.push(depth[p] + 1);
                has_child[p] = true;
                has_child.push(false);
                continue;
            }
        }
        let b = GridBox {
            id,
            class_name: pick(rng, FLOOR_CLASSES).into(),
            bbox2d: [0; 4],
            pos: [
                rng.random_range(FLOOR_RANGE.0..=FLOOR_RANGE.1),
                0,
                rng.random_range(FLOOR_RANGE.0 + 8..=FLOOR_RANGE.1),
            ],
            size: [rng.random_range(3..=14), rng.random_range(3..=8), rng.random_range(3..=14)],
            yaw_idx: quarter_yaw(rng, n_theta),
        };
        let clear = objs
            .iter()
            .zip(&rel)
            .filter(|(_, r)| **r == Relation::Floor)
            .all(|(o, _)| aabb_gap(&b, o, n_theta) >= 2.0);
        if clear {
            objs.push(b);
            rel.push(Relation::Floor);
            depth.push(0);
            has_child.push(false);
        }
    }

    let relations: BTreeMap<u32, Relation> = objs.iter().zip(&rel).map(|(o, r)| (o.id, *r)).collect();
    // Shuffle list order and ids so list index, id and creation order differ.
    let mut ids: Vec<u32> = (0..objs.len() as u32).map(|i| 3 * i + 1).collect();
    ids.shuffle(rng);
    let remap = |id: u32| ids[id as usize];
    let relations = relations
        .into_iter()
        .map(|(id, r)| {
            let r = match r {
                Relation::On(s) => Relation::On(remap(s)),
                other => other,
            };
            (remap(id), r)
        })
        .collect();
    for o in &mut objs {
        o.id = remap(o.id);
    }
    objs.shuffle(rng);
    SynthScene { layout: GridLayout::new(cfg.grid.clone(), objs), graph: ContactGraph { relations } }
}

pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0, width: 640, height: 480 }
}

/// Up direction in camera coordinates for a camera pitched by `pitch` and
/// rolled by `roll` (radians).
fn camera_up(pitch: f64, roll: f64) -> Vec3 {
    let up = Vec3::new(0.0, -pitch.cos(), -pitch.sin());
    let (s, c) = roll.sin_cos();
    Vec3::new(c * up[0] - s * up[1], s * up[0] + c * up[1], up[2])
}

/// Puts a camera in front of a grid scene: a pitched, slightly rolled view
/// from 1.4 m above the floor with the nearest furniture about 2 m away.
/// Sets the layout's frame and offset and fills in 2D boxes.
pub fn attach_camera(layout: &mut GridLayout, rng: &mut impl Rng) -> CameraIntrinsics {
    let k = default_intrinsics();
    let up = camera_up(rng.random_range(0.05..0.35), rng.random_range(-0.08..0.08));
    let frame = scene::build_frame(&up, &Vec3::x()).expect("camera up is never parallel to image right");
    let d = layout.config.delta;
    let mid_x = 0.5 * (FLOOR_RANGE.0 + FLOOR_RANGE.1) as f64;
    layout.config.offset = [-mid_x * d, -1.4, -(FLOOR_RANGE.1 as f64 + 12.0) * d - 1.0];
    layout.frame = frame_to_rows(&frame);
    let cams = layout.to_camera();
    for (o, b) in layout.objects.iter_mut().zip(&cams) {
        o.bbox2d = grid::bbox2d(b, &k);
    }
    k
}

fn frame_to_rows(f: &Mat3) -> [f64; 9] {
    [f[(0, 0)], f[(0, 1)], f[(0, 2)], f[(1, 0)], f[(1, 1)], f[(1, 2)], f[(2, 0)], f[(2, 1)], f[(2, 2)]]
}

/// Upright boxes with arbitrary yaw, sizes and positions under a randomly
/// tilted camera, all in front of the image plane.
pub fn camera_scene(rng: &mut impl Rng, n: usize) -> Vec<CameraBox> {
    let up = camera_up(rng.random_range(-0.4..0.6), rng.random_range(-0.3..0.3));
    let frame = scene::build_frame(&up, &Vec3::x()).expect("camera up is never parallel to image right");
    let height = rng.random_range(0.8..2.0);
    let boxes: Vec<CanonicalBox> = (0..n)
        .map(|i| {
            let size = Vec3::new(rng.random_range(0.1..2.5), rng.random_range(0.1..2.0), rng.random_range(0.1..2.5));
            CanonicalBox {
                id: i as u32,
                class_name: pick(rng, FLOOR_CLASSES).into(),
                pos: Vec3::new(rng.random_range(-4.0..4.0), rng.random_range(0.0..1.5) - height, -rng.random_range(2.5..10.0)),
                size,
                yaw: rng.random_range(-PI..PI),
            }
        })
        .collect();
    scene::decanonicalize(&boxes, &frame, &Vec3::zeros())
}
