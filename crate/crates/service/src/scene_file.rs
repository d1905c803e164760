//! On-disk formats: camera-space scene files (JSON) and grid layout files.
//!
//! A scene file holds the camera intrinsics, an optional image reference, an
//! optional contact-graph text, and the detected boxes:
//!
//! ```json
//! {"image": "rgb/0001.png",
//!  "intrinsics": {"fx": 500, "fy": 500, "cx": 320, "cy": 240, "width": 640, "height": 480},
//!  "boxes": [{"id": 0, "class": "chair", "center": [0.1, 0.4, 3.0], "size": [0.5, 0.9, 0.5],
//!             "x_axis": [1, 0, 0], "z_axis": [0, 0, 1]}]}
//! ```

use std::collections::HashSet;
use std::path::Path;

use lap_core::grid::GridLayout;
use lap_core::scene::{CameraBox, CameraIntrinsics, SceneError, Vec3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("format error at `{field}`: {message}")]
    Format { field: String, message: String },
    #[error("duplicate box id {0}")]
    DuplicateId(u32),
}

impl LoadError {
    fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Format { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsSpec {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub id: u32,
    #[serde(rename = "class")]
    pub class_name: String,
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub x_axis: [f64; 3],
    pub z_axis: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    pub intrinsics: IntrinsicsSpec,
    pub boxes: Vec<BoxSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contacts: Option<String>,
}

/// A validated scene: axes orthonormalized, ids unique.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: Option<String>,
    pub intrinsics: CameraIntrinsics,
    pub boxes: Vec<CameraBox>,
    pub contacts: Option<String>,
}

impl Scene {
    pub fn ids(&self) -> Vec<u32> {
        self.boxes.iter().map(|b| b.id).collect()
    }

    pub fn to_file(&self) -> SceneFile {
        let k = self.intrinsics;
        SceneFile {
            image: self.image.clone(),
            intrinsics: IntrinsicsSpec { fx: k.fx, fy: k.fy, cx: k.cx, cy: k.cy, width: k.width, height: k.height },
            boxes: self
                .boxes
                .iter()
                .map(|b| BoxSpec {
                    id: b.id,
                    class_name: b.class_name.clone(),
                    center: b.center.into(),
                    size: b.size.into(),
                    x_axis: b.ax_x.into(),
                    z_axis: b.ax_z.into(),
                })
                .collect(),
            contacts: self.contacts.clone(),
        }
    }
}

fn scene_error_name(e: &SceneError) -> &'static str {
    match e {
        SceneError::DegenerateAxes(_) => "DegenerateAxes",
        SceneError::InvalidSize { .. } => "InvalidSize",
        _ => "InvalidBox",
    }
}

impl SceneFile {
    pub fn validate(self) -> Result<Scene, LoadError> {
        let k = self.intrinsics;
        for (name, v) in [("fx", k.fx), ("fy", k.fy)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(LoadError::format(format!("intrinsics.{name}"), format!("must be > 0, got {v}")));
            }
        }
        if !(k.cx.is_finite() && k.cy.is_finite()) {
            return Err(LoadError::format("intrinsics", "principal point must be finite"));
        }
        let mut seen = HashSet::new();
        let mut boxes = Vec::with_capacity(self.boxes.len());
        for (i, b) in self.boxes.into_iter().enumerate() {
            if !seen.insert(b.id) {
                return Err(LoadError::DuplicateId(b.id));
            }
            let cb = CameraBox::new(b.id, b.class_name, Vec3::from(b.center), Vec3::from(b.size), Vec3::from(b.x_axis), Vec3::from(b.z_axis))
                .map_err(|e| LoadError::format(format!("boxes[{i}]"), format!("{}: {e}", scene_error_name(&e))))?;
            boxes.push(cb);
        }
        Ok(Scene {
            image: self.image,
            intrinsics: CameraIntrinsics { fx: k.fx, fy: k.fy, cx: k.cx, cy: k.cy, width: k.width, height: k.height },
            boxes,
            contacts: self.contacts,
        })
    }
}

fn read(path: &Path) -> Result<String, LoadError> {
    std::fs::read_to_string(path).map_err(|source| LoadError::Io { path: path.display().to_string(), source })
}

/// Deserializes JSON, reporting the failing field's path.
fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, LoadError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        LoadError::format(if field == "." { "<root>".into() } else { field }, e.into_inner().to_string())
    })
}

pub fn parse_scene(text: &str) -> Result<Scene, LoadError> {
    from_json::<SceneFile>(text)?.validate()
}

pub fn load_scene(path: &Path) -> Result<Scene, LoadError> {
    parse_scene(&read(path)?)
}

pub fn scene_to_json(scene: &Scene) -> String {
    serde_json::to_string_pretty(&scene.to_file()).expect("scene files serialize")
}

pub fn save_scene(path: &Path, scene: &Scene) -> std::io::Result<()> {
    std::fs::write(path, scene_to_json(scene))
}

pub fn parse_layout(text: &str) -> Result<GridLayout, LoadError> {
    let layout: GridLayout = from_json(text)?;
    layout.check().map_err(|m| LoadError::format("objects", m))?;
    Ok(layout)
}

pub fn load_layout(path: &Path) -> Result<GridLayout, LoadError> {
    parse_layout(&read(path)?)
}

pub fn layout_to_json(layout: &GridLayout) -> String {
    serde_json::to_string_pretty(layout).expect("layouts serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    const VALID: &str = r#"{
        "image": "rgb/0001.png",
        "intrinsics": {"fx": 500, "fy": 500, "cx": 320, "cy": 240, "width": 640, "height": 480},
        "boxes": [
            {"id": 0, "class": "chair", "center": [0.1, 0.4, 3.0], "size": [0.5, 0.9, 0.5], "x_axis": [1, 0, 0], "z_axis": [0, 0, 1]},
            {"id": 1, "class": "table", "center": [-0.6, 0.5, 4.0], "size": [1.2, 0.7, 0.8], "x_axis": [0, 0, 1], "z_axis": [-1, 0, 0]},
            {"id": 2, "class": "lamp", "center": [0.9, 0.6, 5.0], "size": [0.3, 0.6, 0.3], "x_axis": [1, 0, 0], "z_axis": [0, 0, 1]}
        ]
    }"#;

    #[test]
    fn valid_scene_loads() {
        let s = parse_scene(VALID).unwrap();
        assert_eq!(s.boxes.len(), 3);
        assert_eq!(s.image.as_deref(), Some("rgb/0001.png"));
        let again = parse_scene(&scene_to_json(&s)).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = VALID.replace(r#""id": 2"#, r#""id": 1"#);
        assert!(matches!(parse_scene(&text), Err(LoadError::DuplicateId(1))));
    }

    #[test]
    fn parallel_axes_cite_degenerate_axes() {
        let text = VALID.replace(r#""x_axis": [0, 0, 1], "z_axis": [-1, 0, 0]"#, r#""x_axis": [1, 0, 0], "z_axis": [1, 0, 0]"#);
        match parse_scene(&text) {
            Err(LoadError::Format { field, message }) => {
                assert_eq!(field, "boxes[1]");
                assert!(message.contains("DegenerateAxes"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn format_errors_name_the_field() {
        let text = VALID.replace(r#""size": [0.5, 0.9, 0.5]"#, r#""size": [0.5, 0.9]"#);
        match parse_scene(&text) {
            Err(LoadError::Format { field, .. }) => assert_eq!(field, "boxes[0].size"),
            other => panic!("{other:?}"),
        }
        let text = VALID.replace(r#""fx": 500"#, r#""fx": -1"#);
        assert!(matches!(parse_scene(&text), Err(LoadError::Format { field, .. }) if field == "intrinsics.fx"));
    }
}
