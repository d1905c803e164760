//! The scene-edit action language: `SELECT obj_N`, `MOVE [dx, dy, dz]`,
//! `ROTATE_Y [d]`, `RESIZE [d]` and `STOP`, one action per line.
//!
//! `SELECT` takes the object's position in the layout's object list. `MOVE`
//! is in grid units, `ROTATE_Y` in yaw bins (15° with 24 bins) and `RESIZE`
//! scales all three sizes by `1 + d/10`, re-rounded to whole cells.

use std::fmt;

use thiserror::Error;

use crate::grid::GridLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Select(usize),
    Move([i32; 3]),
    RotateY(i32),
    Resize(i32),
    Stop,
}

impl Action {
    pub fn is_transform(&self) -> bool {
        matches!(self, Action::Move(_) | Action::RotateY(_) | Action::Resize(_))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Select(i) => write!(f, "SELECT obj_{i}"),
            Action::Move([x, y, z]) => write!(f, "MOVE [{x}, {y}, {z}]"),
            Action::RotateY(d) => write!(f, "ROTATE_Y [{d}]"),
            Action::Resize(d) => write!(f, "RESIZE [{d}]"),
            Action::Stop => write!(f, "STOP"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct ActionSequence(pub Vec<Action>);

impl ActionSequence {
    pub fn new(actions: Vec<Action>) -> Self {
        Self(actions)
    }

    pub fn stop() -> Self {
        Self(vec![Action::Stop])
    }

    pub fn is_stop_only(&self) -> bool {
        self.0 == [Action::Stop]
    }

    pub fn actions(&self) -> &[Action] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Object indices targeted by at least one transform.
    pub fn touched_objects(&self) -> std::collections::BTreeSet<usize> {
        let mut out = std::collections::BTreeSet::new();
        let mut target = None;
        for a in &self.0 {
            match a {
                Action::Select(i) => target = Some(*i),
                Action::Stop => break,
                t if t.is_transform() => {
                    if let Some(i) = target {
                        out.insert(i);
                    }
                }
                _ => {}
            }
        }
        out
    }
}

// Sequences travel as their canonical text.
impl serde::Serialize for ActionSequence {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&serialize(self))
    }
}

impl<'de> serde::Deserialize<'de> for ActionSequence {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_strict(&text).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for ActionSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize(self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strictness {
    Strict,
    #[default]
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {reason}")]
pub struct ParseError {
    pub line: usize,
    pub reason: String,
}

/// A line the lenient parser skipped.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Diagnostic {
    pub line: usize,
    pub text: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Parsed {
    pub sequence: ActionSequence,
    pub diagnostics: Vec<Diagnostic>,
}

/// Smallest accepted `RESIZE` parameter; the scale factor must stay positive.
pub const MIN_RESIZE: i32 = -9;

pub fn parse(text: &str, mode: Strictness) -> Result<Parsed, ParseError> {
    let mut out = Parsed::default();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let mut line = raw.trim();
        if mode == Strictness::Lenient {
            if let Some(cut) = line.find('#') {
                line = line[..cut].trim();
            }
        }
        if line.is_empty() {
            continue;
        }
        match parse_line(line) {
            Ok(a) => out.sequence.0.push(a),
            Err(reason) => match mode {
                Strictness::Strict => return Err(ParseError { line: line_no, reason }),
                Strictness::Lenient => out.diagnostics.push(Diagnostic {
                    line: line_no,
                    text: raw.to_string(),
                    reason,
                }),
            },
        }
    }
    Ok(out)
}

pub fn parse_strict(text: &str) -> Result<ActionSequence, ParseError> {
    parse(text, Strictness::Strict).map(|p| p.sequence)
}

fn parse_line(line: &str) -> Result<Action, String> {
    if line == "STOP" {
        return Ok(Action::Stop);
    }
    if let Some(rest) = line.strip_prefix("SELECT") {
        let rest = rest.trim();
        let idx = rest
            .strip_prefix("obj_")
            .ok_or_else(|| format!("expected obj_N after SELECT, got {rest:?}"))?;
        return idx
            .parse::<usize>()
            .map(Action::Select)
            .map_err(|_| format!("invalid object index {idx:?}"));
    }
    if let Some(rest) = line.strip_prefix("MOVE") {
        let v = bracketed_ints(rest, 3)?;
        return Ok(Action::Move([v[0], v[1], v[2]]));
    }
    if let Some(rest) = line.strip_prefix("ROTATE_Y") {
        return Ok(Action::RotateY(bracketed_ints(rest, 1)?[0]));
    }
    if let Some(rest) = line.strip_prefix("RESIZE") {
        let d = bracketed_ints(rest, 1)?[0];
        if d < MIN_RESIZE {
            return Err(format!("RESIZE [{d}] would give a non-positive scale"));
        }
        return Ok(Action::Resize(d));
    }
    Err(format!("unknown action {line:?}"))
}

fn bracketed_ints(rest: &str, n: usize) -> Result<Vec<i32>, String> {
    let rest = rest.trim();
    let inner = rest
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| format!("expected [..] parameters, got {rest:?}"))?;
    let vals = inner
        .split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<i32>().map_err(|_| format!("parameter {t:?} is not an integer"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if vals.len() != n {
        return Err(format!("expected {n} parameters, got {}", vals.len()));
    }
    Ok(vals)
}

pub fn serialize(seq: &ActionSequence) -> String {
    seq.0.iter().map(|a| a.to_string()).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub enum ViolationKind {
    TransformBeforeSelect,
    UnknownObject(usize),
    BelowGround { object: usize, y: i32 },
    SizeBelowOne { object: usize },
    StopNotLast,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Violation {
    /// Position of the offending action in the sequence.
    pub index: usize,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "action {}: ", self.index)?;
        match &self.kind {
            ViolationKind::TransformBeforeSelect => write!(f, "transform before SELECT"),
            ViolationKind::UnknownObject(i) => write!(f, "unknown object obj_{i}"),
            ViolationKind::BelowGround { object, y } => {
                write!(f, "obj_{object} moved below ground (y = {y})")
            }
            ViolationKind::SizeBelowOne { object } => {
                write!(f, "obj_{object} resized below one grid unit")
            }
            ViolationKind::StopNotLast => write!(f, "STOP is not the last action"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApplyError {
    #[error("{}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

/// `round(s · (10 + ds) / 10)` with halves rounded up, in exact integer arithmetic.
pub fn resize_component(s: i32, ds: i32) -> i32 {
    let p = s as i64 * (10 + ds) as i64;
    p.div_euclid(10) as i32 + if p.rem_euclid(10) >= 5 { 1 } else { 0 }
}

/// Interprets a sequence with clamping (y >= 0, sizes >= 1), reporting every
/// rule the sequence breaks.
pub fn apply_lenient(layout: &GridLayout, seq: &ActionSequence) -> (GridLayout, Vec<Violation>) {
    let mut out = layout.clone();
    let mut violations = Vec::new();
    let n_theta = layout.config.n_theta as i32;
    let mut target: Option<usize> = None;
    let mut selected_any = false;
    for (index, action) in seq.0.iter().enumerate() {
        match *action {
            Action::Stop => {
                if index + 1 != seq.0.len() {
                    violations.push(Violation { index, kind: ViolationKind::StopNotLast });
                }
                break;
            }
            Action::Select(i) => {
                selected_any = true;
                if i < out.objects.len() {
                    target = Some(i);
                } else {
                    target = None;
                    violations.push(Violation { index, kind: ViolationKind::UnknownObject(i) });
                }
            }
            t => {
                let Some(i) = target else {
                    if !selected_any {
                        violations.push(Violation { index, kind: ViolationKind::TransformBeforeSelect });
                    }
                    continue;
                };
                let obj = &mut out.objects[i];
                match t {
                    Action::Move(d) => {
                        for k in 0..3 {
                            obj.pos[k] += d[k];
                        }
                        if obj.pos[1] < 0 {
                            violations.push(Violation {
                                index,
                                kind: ViolationKind::BelowGround { object: i, y: obj.pos[1] },
                            });
                            obj.pos[1] = 0;
                        }
                    }
                    Action::RotateY(d) => {
                        obj.yaw_idx = (obj.yaw_idx as i32 + d).rem_euclid(n_theta) as u32;
                    }
                    Action::Resize(ds) => {
                        if ds < MIN_RESIZE {
                            violations.push(Violation { index, kind: ViolationKind::SizeBelowOne { object: i } });
                            continue;
                        }
                        let mut clamped = false;
                        for s in obj.size.iter_mut() {
                            let r = resize_component(*s, ds);
                            if r < 1 {
                                clamped = true;
                            }
                            *s = r.max(1);
                        }
                        if clamped {
                            violations.push(Violation { index, kind: ViolationKind::SizeBelowOne { object: i } });
                        }
                    }
                    _ => unreachable!(),
                }
            }
        }
    }
    (out, violations)
}

pub fn validate(seq: &ActionSequence, layout: &GridLayout) -> Vec<Violation> {
    apply_lenient(layout, seq).1
}

/// `Strict` refuses sequences with violations; `Lenient` clamps them.
pub fn apply(layout: &GridLayout, seq: &ActionSequence, mode: Strictness) -> Result<GridLayout, ApplyError> {
    let (out, violations) = apply_lenient(layout, seq);
    if mode == Strictness::Strict && !violations.is_empty() {
        return Err(ApplyError::Invalid(violations));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvertError {
    #[error("original and perturbed layouts have different object ids")]
    MismatchedLayouts,
}

/// Corrective sequence undoing `perturbation`: per-object blocks in reverse
/// order, actions reversed and negated, resizes re-derived from the stored
/// pre-resize sizes, terminated by `STOP`.
pub fn invert(
    perturbation: &ActionSequence,
    original: &GridLayout,
    perturbed: &GridLayout,
) -> Result<ActionSequence, InvertError> {
    let mut a: Vec<u32> = original.objects.iter().map(|o| o.id).collect();
    let mut b: Vec<u32> = perturbed.objects.iter().map(|o| o.id).collect();
    a.sort_unstable();
    b.sort_unstable();
    if a != b {
        return Err(InvertError::MismatchedLayouts);
    }

    // Replay step by step so each inverse uses the effective change.
    let mut state = original.clone();
    let mut blocks: Vec<(usize, Vec<Action>)> = Vec::new();
    for action in &perturbation.0 {
        match *action {
            Action::Stop => break,
            Action::Select(i) => {
                if i < state.objects.len() {
                    blocks.push((i, Vec::new()));
                }
            }
            t => {
                let Some((i, inv)) = blocks.last_mut() else { continue };
                let before = state.objects[*i].clone();
                let (next, _) = apply_lenient(&state, &ActionSequence(vec![Action::Select(*i), t]));
                let after = next.objects[*i].clone();
                state = next;
                match t {
                    Action::Move(_) => {
                        let d = [0, 1, 2].map(|k| before.pos[k] - after.pos[k]);
                        if d != [0, 0, 0] {
                            inv.push(Action::Move(d));
                        }
                    }
                    Action::RotateY(d) => inv.push(Action::RotateY(-d)),
                    Action::Resize(_) => {
                        // Pushed in reverse; the block is reversed below.
                        for ds in inverse_resize_steps(after.size, before.size).into_iter().rev() {
                            inv.push(Action::Resize(ds));
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    let mut out = Vec::new();
    for (i, mut inv) in blocks.into_iter().rev() {
        if inv.is_empty() {
            continue;
        }
        inv.reverse();
        out.push(Action::Select(i));
        out.extend(inv);
    }
    out.push(Action::Stop);
    Ok(ActionSequence(out))
}

/// The resize parameter bringing `from` closest (L1) to `to`; ties go to the
/// value nearest `round(10·(to/from − 1))` averaged over components.
pub fn best_inverse_resize(from: [i32; 3], to: [i32; 3]) -> i32 {
    let guess = (0..3)
        .map(|k| 10.0 * (to[k] as f64 / from[k] as f64 - 1.0))
        .sum::<f64>()
        / 3.0;
    let mut best = (i64::MAX, f64::INFINITY, 0);
    for ds in MIN_RESIZE..=100 {
        let err: i64 = (0..3)
            .map(|k| (resize_component(from[k], ds).max(1) - to[k]).abs() as i64)
            .sum();
        let dist = (ds as f64 - guess).abs();
        if err < best.0 || (err == best.0 && dist < best.1) {
            best = (err, dist, ds);
        }
    }
    best.2
}

fn resize_all(size: [i32; 3], ds: i32) -> [i32; 3] {
    size.map(|s| resize_component(s, ds).max(1))
}

/// Resizes taking `from` back to `to`. Rounding makes a single factor
/// inexact for many size triples, so when the best single step misses, the
/// shortest exact pair of steps is used instead; if none exists the best
/// single step stands and the residual remains.
pub fn inverse_resize_steps(from: [i32; 3], to: [i32; 3]) -> Vec<i32> {
    if from == to {
        return Vec::new();
    }
    let single = best_inverse_resize(from, to);
    if resize_all(from, single) == to {
        return vec![single];
    }
    let mut best: Option<(i32, [i32; 2])> = None;
    for a in MIN_RESIZE..=MAX_INVERSE_STEP {
        if a == 0 {
            continue;
        }
        let mid = resize_all(from, a);
        for b in MIN_RESIZE..=MAX_INVERSE_STEP {
            if b != 0 && resize_all(mid, b) == to {
                let cost = a.abs() + b.abs();
                if best.is_none_or(|(c, _)| cost < c) {
                    best = Some((cost, [a, b]));
                }
            }
        }
    }
    match best {
        Some((_, pair)) => pair.to_vec(),
        None => vec![single],
    }
}

/// Largest step tried by the two-step inverse search.
const MAX_INVERSE_STEP: i32 = 20;
