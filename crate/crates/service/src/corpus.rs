//! Scene corpora on disk: a directory of scene files, optionally with
//! `<stem>.init.json` grid layouts produced by an external model.

use std::path::{Path, PathBuf};

use lap_core::assembly::{infer_contact_graph, parse_contact, ContactGraph};
use lap_core::grid::{build_grid_layout, GridLayout};
use lap_core::metrics::ExclusionConfig;
use lap_core::perturb::{scene_rng, CorpusScene};
use lap_core::synth::{attach_camera, grid_scene, SynthConfig};

use crate::config::GridDefaults;
use crate::scene_file::{self, load_layout, load_scene, Scene};

pub const INIT_SUFFIX: &str = ".init.json";

/// Scene files in `dir`, sorted by name.
pub fn list_scenes(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            p.is_file() && name.ends_with(".json") && !name.ends_with(INIT_SUFFIX)
        })
        .collect();
    out.sort();
    Ok(out)
}

pub fn scene_id(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("scene").to_string()
}

pub fn init_path(path: &Path) -> PathBuf {
    path.with_file_name(format!("{}{INIT_SUFFIX}", scene_id(path)))
}

/// A scene with its ground-truth grid layout and contact graph.
#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub id: String,
    pub scene: Scene,
    pub gt: GridLayout,
    pub graph: ContactGraph,
    pub external_init: Option<GridLayout>,
}

pub fn load_corpus_scene(path: &Path, grid: &GridDefaults, excl: &ExclusionConfig) -> Result<LoadedScene, String> {
    let scene = load_scene(path).map_err(|e| e.to_string())?;
    let gt = build_grid_layout(&scene.boxes, &scene.intrinsics, grid.delta, grid.n_theta).map_err(|e| e.to_string())?;
    let graph = match &scene.contacts {
        Some(text) => parse_contact(text, &scene.ids()).graph,
        None => infer_contact_graph(&gt, excl),
    };
    let init = init_path(path);
    let external_init = if init.exists() { Some(load_layout(&init).map_err(|e| e.to_string())?) } else { None };
    Ok(LoadedScene { id: scene_id(path), scene, gt, graph, external_init })
}

impl LoadedScene {
    pub fn corpus_scene(&self) -> CorpusScene {
        CorpusScene {
            id: self.id.clone(),
            image: self.scene.image.clone().unwrap_or_default(),
            gt: self.gt.clone(),
            external_init: self.external_init.clone(),
        }
    }
}

/// Writes `count` synthetic scene files (with contact text) to `dir`.
pub fn write_synthetic_corpus(dir: &Path, count: usize, seed: u64, synth: &SynthConfig) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let id = format!("scene_{i:05}");
        let mut rng = scene_rng(seed, &id);
        let mut s = grid_scene(&mut rng, synth);
        let intrinsics = attach_camera(&mut s.layout, &mut rng);
        let scene = Scene {
            image: Some(format!("images/{id}.png")),
            intrinsics,
            boxes: s.layout.to_camera(),
            contacts: Some(s.graph.to_text(&s.layout)),
        };
        let path = dir.join(format!("{id}.json"));
        scene_file::save_scene(&path, &scene)?;
        paths.push(path);
    }
    Ok(paths)
}
