//! Planner and contact-graph prompt text.

use crate::grid::{GridConfig, GridLayout};

/// Planner system prompt for a given grid (cell size and yaw bins appear in
/// the text).
pub fn planner_system_prompt(cfg: &GridConfig) -> String {
    let cm = fmt_num(cfg.delta * 100.0);
    let step = fmt_num(360.0 / cfg.n_theta as f64);
    let last = cfg.n_theta - 1;
    format!(
        "You are a 3D layout refinement agent. Given an image and the current 3D layout of detected objects, \
your task is to correct errors in object positions, orientations, and sizes. If the layout is already correct, \
output STOP immediately.

## Scene Representation
Each object in the scene is described with:
  - obj_id and category: object identity
  - bbox: [x1, y1, x2, y2] # 2D bounding box in normalized image pixel coordinates (0–1000)
  - pos: [gx, gy, gz] # 3D position in grid units (1 grid unit = {cm} cm), where gy is the bottom of the object
  - size: [gw, gh, gl] # width, height, length in grid units
  - yaw: orientation index (0–{last}, each step = {step}°)

## Coordinate Axes
  - X: horizontal, increases toward image right
  - Y: vertical, increases upward
  - Z: depth, increases forward into the scene

## Action Space
SELECT obj_N        # choose target object
MOVE [dx, dy, dz]   # adjust position
ROTATE_Y [d]        # adjust orientation (each unit = {step}°)
RESIZE [d]          # uniformly adjust size
STOP                # end the sequence

## Rules
  - Output ONLY actions, one per line, integers only.
  - SELECT before correcting an object.
  - If the layout already looks correct, output STOP immediately.
  - Fix the most significant errors first.
  - Prefer fewer actions. Stop when no further correction is needed."
    )
}

fn fmt_num(x: f64) -> String {
    if (x - x.round()).abs() < 1e-9 {
        format!("{}", x.round() as i64)
    } else {
        let s = format!("{x:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn ints<const N: usize>(v: &[i32; N]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

/// The `## Scene Layout` block, one five-line entry per object.
pub fn layout_block(layout: &GridLayout) -> String {
    let mut lines = vec![format!("## Scene Layout (grid-based, 1 unit = {} cm)", fmt_num(layout.config.delta * 100.0))];
    for (i, o) in layout.objects.iter().enumerate() {
        lines.push(format!("obj_{i} {}", o.class_name));
        lines.push(format!("  bbox: {}", ints(&o.bbox2d)));
        lines.push(format!("  pos: {}", ints(&o.pos)));
        lines.push(format!("  size: {}", ints(&o.size)));
        lines.push(format!("  yaw: {}", o.yaw_idx));
    }
    lines.join("\n")
}

pub fn planner_user_prompt(layout: &GridLayout) -> String {
    format!(
        "<image>\n\nExamine the image and the detected 3D layout below. Identify and correct any errors in object \
positions, orientations, or sizes.\n\nCurrent scene layout:\n{}",
        layout_block(layout)
    )
}

/// Contact-graph prompt listing the layout's detections with their 2D boxes.
pub fn contact_prompt(image: &str, layout: &GridLayout) -> String {
    let detections: Vec<String> = layout
        .objects
        .iter()
        .map(|o| {
            let b = o.bbox2d;
            format!("({}, {}, {:.4}, {:.4}, {:.4}, {:.4})", o.id, o.class_name, b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64)
        })
        .collect();
    format!(
        "Given an indoor image and a list of detected 2D bounding boxes, identify the physical contact relation for \
each object. For every detected object, assign exactly one of the following contact types:

  - FLOOR: the object rests directly on the floor
  - ON obj_id: the object rests on top of another detected object
  - FREE: the object has no contact with the floor or any other object (e.g., wall-mounted, hanging, floating)

For each detected object, output a single line:

  <CONTACT> id: {{id}} class: {{class}} relation: {{FLOOR | ON obj_id | FREE}} </CONTACT>

Examples:
  <CONTACT> id: 3 class: bed relation: FLOOR </CONTACT>
  <CONTACT> id: 2 class: pillow relation: ON 3 </CONTACT>
  <CONTACT> id: 1 class: lamp relation: ON 5 </CONTACT>

Input image: {image}
Detections (id, class, x1, y1, x2, y2):
{}

Output one <CONTACT>...</CONTACT> line per detected object. Do NOT skip any object.",
        detections.join("\n")
    )
}
