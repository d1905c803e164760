//! Contact graphs, relational bundles and gravity settling of grid layouts.
//!
//! Contact lines look like
//! `<CONTACT> id: 2 class: pillow relation: ON 3 </CONTACT>`, where the
//! relation is `FLOOR`, `ON <id>` or `FREE` and ids are detection ids.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::grid::GridLayout;
use crate::metrics::{self, ExclusionConfig, SUPPORT_OVERLAP};
use crate::scene::{self, Vec3};

pub const DEFAULT_CLEARANCE: i32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    Floor,
    On(u32),
    Free,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Relation::Floor => write!(f, "FLOOR"),
            Relation::On(id) => write!(f, "ON {id}"),
            Relation::Free => write!(f, "FREE"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContactGraph {
    pub relations: BTreeMap<u32, Relation>,
}

impl ContactGraph {
    pub fn all_floor(layout: &GridLayout) -> Self {
        Self { relations: layout.objects.iter().map(|o| (o.id, Relation::Floor)).collect() }
    }

    pub fn relation(&self, id: u32) -> Relation {
        self.relations.get(&id).copied().unwrap_or(Relation::Floor)
    }

    pub fn supporter(&self, id: u32) -> Option<u32> {
        match self.relation(id) {
            Relation::On(s) => Some(s),
            _ => None,
        }
    }

    /// Direct supportees of each supporter, ascending ids.
    pub fn children(&self) -> BTreeMap<u32, Vec<u32>> {
        let mut out: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for (&id, r) in &self.relations {
            if let Relation::On(s) = r {
                out.entry(*s).or_default().push(id);
            }
        }
        out
    }

    /// First support cycle found, as ids in cycle order.
    pub fn find_cycle(&self) -> Option<Vec<u32>> {
        // 0 = unvisited, 1 = on the current path, 2 = done
        let mut state: HashMap<u32, u8> = HashMap::new();
        for &start in self.relations.keys() {
            if state.get(&start).copied().unwrap_or(0) != 0 {
                continue;
            }
            let mut path = Vec::new();
            let mut cur = Some(start);
            while let Some(id) = cur {
                match state.get(&id).copied().unwrap_or(0) {
                    1 => {
                        let at = path.iter().position(|&x| x == id).unwrap_or(0);
                        return Some(path[at..].to_vec());
                    }
                    2 => break,
                    _ => {}
                }
                state.insert(id, 1);
                path.push(id);
                cur = self.supporter(id).filter(|s| self.relations.contains_key(s));
            }
            for id in path {
                state.insert(id, 2);
            }
        }
        None
    }

    pub fn is_acyclic(&self) -> bool {
        self.find_cycle().is_none()
    }

    /// Demotes the lowest id of each cycle to `Floor` until none remain;
    /// returns the cycles that were broken.
    pub fn break_cycles(&mut self) -> Vec<Vec<u32>> {
        let mut broken = Vec::new();
        while let Some(cycle) = self.find_cycle() {
            let lowest = *cycle.iter().min().expect("cycles are nonempty");
            self.relations.insert(lowest, Relation::Floor);
            broken.push(cycle);
        }
        broken
    }

    /// Objects resting on a `Free` object, directly or transitively.
    fn hangs_from_free(&self, id: u32) -> bool {
        let mut cur = id;
        for _ in 0..=self.relations.len() {
            match self.relation(cur) {
                Relation::Free => return true,
                Relation::Floor => return false,
                Relation::On(s) => {
                    if !self.relations.contains_key(&s) {
                        return false;
                    }
                    cur = s;
                }
            }
        }
        false
    }

    /// One contact line per object of `layout`.
    pub fn to_text(&self, layout: &GridLayout) -> String {
        layout
            .objects
            .iter()
            .map(|o| format!("<CONTACT> id: {} class: {} relation: {} </CONTACT>", o.id, o.class_name, self.relation(o.id)))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ContactIssue {
    Malformed(String),
    UnknownId(u32),
    DuplicateId(u32),
    /// The supporter is unknown or the object itself; treated as `Floor`.
    BadSupporter { id: u32, supporter: u32 },
    /// No line for this object; treated as `Floor`.
    Missing(u32),
    /// Broken by demoting the lowest id to `Floor`.
    CycleDetected(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContactDiagnostic {
    /// 1-based line number, if the issue comes from a specific line.
    pub line: Option<usize>,
    pub issue: ContactIssue,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedContact {
    pub graph: ContactGraph,
    pub diagnostics: Vec<ContactDiagnostic>,
}

/// Lenient contact parsing against the known object ids. Malformed lines,
/// unknown and duplicate ids are skipped with a diagnostic; missing objects
/// and cycles are resolved to `Floor`.
pub fn parse_contact(text: &str, ids: &[u32]) -> ParsedContact {
    let known: BTreeSet<u32> = ids.iter().copied().collect();
    let mut out = ParsedContact::default();
    let mut diag = |line: Option<usize>, issue| out.diagnostics.push(ContactDiagnostic { line, issue });
    let mut relations = BTreeMap::new();

    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (id, rel) = match parse_contact_line(line) {
            Ok(x) => x,
            Err(e) => {
                diag(Some(n + 1), ContactIssue::Malformed(e));
                continue;
            }
        };
        if !known.contains(&id) {
            diag(Some(n + 1), ContactIssue::UnknownId(id));
            continue;
        }
        if relations.contains_key(&id) {
            diag(Some(n + 1), ContactIssue::DuplicateId(id));
            continue;
        }
        let rel = match rel {
            Relation::On(s) if s == id || !known.contains(&s) => {
                diag(Some(n + 1), ContactIssue::BadSupporter { id, supporter: s });
                Relation::Floor
            }
            r => r,
        };
        relations.insert(id, rel);
    }
    for &id in &known {
        if let std::collections::btree_map::Entry::Vacant(e) = relations.entry(id) {
            diag(None, ContactIssue::Missing(id));
            e.insert(Relation::Floor);
        }
    }
    let mut graph = ContactGraph { relations };
    for cycle in graph.break_cycles() {
        diag(None, ContactIssue::CycleDetected(cycle));
    }
    out.graph = graph;
    out
}

fn parse_contact_line(line: &str) -> Result<(u32, Relation), String> {
    let inner = line
        .strip_prefix("<CONTACT>")
        .and_then(|r| r.trim_end().strip_suffix("</CONTACT>"))
        .ok_or_else(|| "missing <CONTACT> ... </CONTACT> tags".to_string())?;
    let id_at = inner.find("id:").ok_or("missing id:")?;
    let class_at = inner.find("class:").ok_or("missing class:")?;
    let rel_at = inner.find("relation:").ok_or("missing relation:")?;
    if !(id_at < class_at && class_at < rel_at) {
        return Err("fields out of order".into());
    }
    let id_text = inner[id_at + 3..class_at].trim();
    let id = parse_id(id_text).ok_or_else(|| format!("bad id {id_text:?}"))?;
    let rel_text = inner[rel_at + 9..].trim();
    let words: Vec<&str> = rel_text.split_whitespace().collect();
    let rel = match words.as_slice() {
        [w] if w.eq_ignore_ascii_case("FLOOR") => Relation::Floor,
        [w] if w.eq_ignore_ascii_case("FREE") => Relation::Free,
        [w, s] if w.eq_ignore_ascii_case("ON") => {
            Relation::On(parse_id(s).ok_or_else(|| format!("bad supporter {s:?}"))?)
        }
        _ => return Err(format!("unknown relation {rel_text:?}")),
    };
    Ok((id, rel))
}

fn parse_id(s: &str) -> Option<u32> {
    s.strip_prefix("obj_").unwrap_or(s).parse().ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BundleMember {
    pub id: u32,
    /// Supporter inside the bundle; `None` for the root.
    pub parent: Option<u32>,
    /// Position relative to the root when the bundle was built, grid units.
    pub offset: [i32; 3],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RelationalBundle {
    pub root: u32,
    /// Root first, then supportees in breadth-first order.
    pub members: Vec<BundleMember>,
}

/// One bundle per floor-anchored object, holding everything transitively on
/// it, plus the ids left out of settling (`Free` objects and anything resting
/// on them).
pub fn build_bundles(graph: &ContactGraph, layout: &GridLayout) -> (Vec<RelationalBundle>, Vec<u32>) {
    let mut graph = graph.clone();
    graph.break_cycles();
    let present: BTreeSet<u32> = layout.objects.iter().map(|o| o.id).collect();
    let children = graph.children();
    let mut bundles = Vec::new();
    let mut free = Vec::new();
    for o in &layout.objects {
        let rooted = match graph.relation(o.id) {
            Relation::Floor => true,
            Relation::On(s) => !present.contains(&s),
            Relation::Free => false,
        };
        if graph.hangs_from_free(o.id) {
            free.push(o.id);
        }
        if !rooted {
            continue;
        }
        let mut members = vec![BundleMember { id: o.id, parent: None, offset: [0; 3] }];
        let mut i = 0;
        while i < members.len() {
            let id = members[i].id;
            for &c in children.get(&id).map(Vec::as_slice).unwrap_or(&[]) {
                if let Some(cb) = layout.get(c) {
                    let offset = [0, 1, 2].map(|k| cb.pos[k] - o.pos[k]);
                    members.push(BundleMember { id: c, parent: Some(id), offset });
                }
            }
            i += 1;
        }
        bundles.push(RelationalBundle { root: o.id, members });
    }
    (bundles, free)
}

/// Deterministic single sweep. Bundles are taken by ascending initial root
/// bottom (ties by root id); each is lifted by `clearance` and dropped until
/// its root reaches the floor or the highest already settled top beneath it
/// that covers at least half of the root's footprint. Supportees then rest
/// exactly on their supporters. Horizontal coordinates never change and
/// `Free` objects are untouched.
pub fn settle(layout: &GridLayout, bundles: &[RelationalBundle], clearance: i32) -> GridLayout {
    let mut out = layout.clone();
    let n_theta = layout.n_theta();
    let index: HashMap<u32, usize> = layout.objects.iter().enumerate().map(|(i, o)| (o.id, i)).collect();

    let mut order: Vec<&RelationalBundle> = bundles.iter().filter(|b| index.contains_key(&b.root)).collect();
    order.sort_by_key(|b| (layout.objects[index[&b.root]].bottom(), b.root));

    let mut settled: Vec<usize> = Vec::new();
    for b in order {
        let root = index[&b.root];
        let lifted = out.objects[root].bottom() + clearance;
        let own = (out.objects[root].size[0] * out.objects[root].size[2]) as f64;
        let mut landing = 0;
        for &s in &settled {
            let top = out.objects[s].top();
            if top <= lifted
                && top > landing
                && metrics::footprint_overlap(&out.objects[root], &out.objects[s], n_theta) >= SUPPORT_OVERLAP * own - 1e-9
            {
                landing = top;
            }
        }
        out.objects[root].pos[1] = landing;
        settled.push(root);
        for m in &b.members[1..] {
            let (Some(&i), Some(parent)) = (index.get(&m.id), m.parent) else { continue };
            let top = out.objects[index[&parent]].top();
            out.objects[i].pos[1] = top;
            settled.push(i);
        }
    }
    out
}

/// Bundles the layout under `graph` and settles it.
pub fn settle_with_graph(layout: &GridLayout, graph: &ContactGraph, clearance: i32) -> GridLayout {
    let (bundles, _) = build_bundles(graph, layout);
    settle(layout, &bundles, clearance)
}

/// Contact graph read off the geometry: objects near the floor are `Floor`;
/// otherwise the lower object offering the largest footprint overlap (at
/// least half) is the supporter; unsupported wall-mounted classes are `Free`
/// and anything else falls back to `Floor`.
pub fn infer_contact_graph(layout: &GridLayout, excl: &ExclusionConfig) -> ContactGraph {
    let n_theta = layout.n_theta();
    let mut relations = BTreeMap::new();
    for a in &layout.objects {
        if a.bottom() <= metrics::SUPPORT_TOLERANCE {
            relations.insert(a.id, Relation::Floor);
            continue;
        }
        let own = (a.size[0] * a.size[2]) as f64;
        let best = layout
            .objects
            .iter()
            .filter(|b| b.id != a.id && b.bottom() < a.bottom() && b.top() <= a.bottom() + metrics::SUPPORT_TOLERANCE)
            .map(|b| (metrics::footprint_overlap(a, b, n_theta), b))
            .filter(|(ov, _)| *ov >= SUPPORT_OVERLAP * own - 1e-9)
            .max_by(|x, y| x.0.total_cmp(&y.0).then(y.1.id.cmp(&x.1.id)));
        let rel = match best {
            Some((_, b)) => Relation::On(b.id),
            None if excl.svr_wall_mounted.iter().any(|w| metrics::label_matches(&a.class_name, w)) => Relation::Free,
            None => Relation::Floor,
        };
        relations.insert(a.id, rel);
    }
    ContactGraph { relations }
}

/// Wavefront OBJ text with one 8-vertex, 12-triangle box per object, in
/// meters in the gravity-aligned frame (y up).
pub fn to_obj(layout: &GridLayout) -> String {
    let mut s = String::new();
    let faces: [[usize; 3]; 12] = [
        [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],
        [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],
        [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
    ];
    for (n, b) in layout.to_canonical().iter().enumerate() {
        s.push_str(&format!("o obj_{}_{}\n", b.id, b.class_name.replace(char::is_whitespace, "_")));
        let (ax, az) = (scene::yaw_axis_x(b.yaw), scene::yaw_axis_z(b.yaw));
        let c = b.center();
        for sx in [-0.5, 0.5] {
            for sy in [-0.5, 0.5] {
                for sz in [-0.5, 0.5] {
                    let v: Vec3 = c + ax * (sx * b.size[0]) + Vec3::y() * (sy * b.size[1]) + az * (sz * b.size[2]);
                    s.push_str(&format!("v {:.6} {:.6} {:.6}\n", v[0], v[1], v[2]));
                }
            }
        }
        for f in faces {
            let base = n * 8 + 1;
            s.push_str(&format!("f {} {} {}\n", base + f[0], base + f[1], base + f[2]));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridBox, GridConfig};

    fn gb(id: u32, class: &str, pos: [i32; 3], size: [i32; 3]) -> GridBox {
        GridBox { id, class_name: class.into(), bbox2d: [0; 4], pos, size, yaw_idx: 12 }
    }

    fn layout(objs: Vec<GridBox>) -> GridLayout {
        GridLayout::new(GridConfig::default(), objs)
    }

    #[test]
    fn parse_examples() {
        let p = parse_contact(
            "<CONTACT> id: 2 class: pillow relation: ON 3 </CONTACT>\n<CONTACT> id: 3 class: bed relation: FLOOR </CONTACT>",
            &[2, 3],
        );
        assert_eq!(p.graph.relation(2), Relation::On(3));
        assert_eq!(p.graph.relation(3), Relation::Floor);
        assert!(p.diagnostics.is_empty());
    }

    #[test]
    fn parse_diagnostics() {
        let text = "<CONTACT> id: 1 class: night stand relation: ON obj_4 </CONTACT>\n\
                    garbage\n\
                    <CONTACT> id: 9 class: ghost relation: FLOOR </CONTACT>\n\
                    <CONTACT> id: 1 class: lamp relation: FREE </CONTACT>\n\
                    <CONTACT> id: 4 class: desk relation: ON 4 </CONTACT>";
        let p = parse_contact(text, &[1, 4, 5]);
        assert_eq!(p.graph.relation(1), Relation::On(4));
        assert_eq!(p.graph.relation(4), Relation::Floor);
        assert_eq!(p.graph.relation(5), Relation::Floor);
        let issues: Vec<_> = p.diagnostics.iter().map(|d| d.issue.clone()).collect();
        assert_eq!(
            issues,
            vec![
                ContactIssue::Malformed("missing <CONTACT> ... </CONTACT> tags".into()),
                ContactIssue::UnknownId(9),
                ContactIssue::DuplicateId(1),
                ContactIssue::BadSupporter { id: 4, supporter: 4 },
                ContactIssue::Missing(5),
            ]
        );
    }

    #[test]
    fn cycle_is_broken_at_lowest_id() {
        let text = "<CONTACT> id: 2 class: a relation: ON 5 </CONTACT>\n\
                    <CONTACT> id: 5 class: b relation: ON 2 </CONTACT>\n\
                    <CONTACT> id: 7 class: c relation: ON 2 </CONTACT>";
        let p = parse_contact(text, &[2, 5, 7]);
        assert_eq!(p.graph.relation(2), Relation::Floor);
        assert_eq!(p.graph.relation(5), Relation::On(2));
        assert!(p.graph.is_acyclic());
        assert!(matches!(p.diagnostics.last().unwrap().issue, ContactIssue::CycleDetected(_)));
    }

    #[test]
    fn bundle_examples() {
        let l = layout(vec![
            gb(1, "table", [10, 0, 10], [8, 7, 8]),
            gb(2, "lamp", [10, 9, 10], [2, 4, 2]),
            gb(3, "wall clock", [30, 20, 0], [3, 3, 1]),
            gb(4, "chair", [30, 0, 10], [4, 8, 4]),
        ]);
        let mut g = ContactGraph::all_floor(&l);
        g.relations.insert(2, Relation::On(1));
        g.relations.insert(3, Relation::Free);
        let (bundles, free) = build_bundles(&g, &l);
        assert_eq!(bundles.len(), 2);
        assert_eq!(bundles[0].members.iter().map(|m| m.id).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(bundles[0].members[1].offset, [0, 9, 0]);
        assert_eq!(free, vec![3]);

        let (singletons, _) = build_bundles(&ContactGraph::all_floor(&l), &l);
        assert_eq!(singletons.len(), 4);
    }

    #[test]
    fn settle_examples() {
        let one = layout(vec![gb(0, "crate", [5, 3, 5], [4, 4, 4])]);
        let s = settle_with_graph(&one, &ContactGraph::all_floor(&one), DEFAULT_CLEARANCE);
        assert_eq!(s.objects[0].pos, [5, 0, 5]);

        let l = layout(vec![
            gb(1, "table", [10, 2, 10], [8, 7, 8]),
            gb(2, "lamp", [11, 9, 9], [2, 4, 2]),
            gb(3, "mirror", [30, 12, 0], [3, 3, 1]),
        ]);
        let mut g = ContactGraph::all_floor(&l);
        g.relations.insert(2, Relation::On(1));
        g.relations.insert(3, Relation::Free);
        let s = settle_with_graph(&l, &g, DEFAULT_CLEARANCE);
        assert_eq!(s.objects[0].pos, [10, 0, 10]);
        assert_eq!(s.objects[1].pos, [11, 7, 9]);
        assert_eq!(s.objects[2], l.objects[2]);
        assert_eq!(settle_with_graph(&s, &g, DEFAULT_CLEARANCE), s);
    }

    #[test]
    fn floor_bundle_lands_on_lower_bundle() {
        let l = layout(vec![
            gb(1, "cabinet", [10, 0, 10], [8, 6, 8]),
            gb(2, "box", [10, 9, 10], [4, 2, 4]),
        ]);
        let s = settle_with_graph(&l, &ContactGraph::all_floor(&l), DEFAULT_CLEARANCE);
        assert_eq!(s.objects[1].pos[1], 6);
    }

    #[test]
    fn inferred_graph() {
        let l = layout(vec![
            gb(1, "table", [10, 0, 10], [8, 7, 8]),
            gb(2, "vase", [10, 7, 10], [2, 3, 2]),
            gb(3, "painting", [30, 15, 0], [6, 4, 1]),
            gb(4, "drone", [40, 15, 40], [2, 1, 2]),
        ]);
        let g = infer_contact_graph(&l, &ExclusionConfig::default());
        assert_eq!(g.relation(1), Relation::Floor);
        assert_eq!(g.relation(2), Relation::On(1));
        assert_eq!(g.relation(3), Relation::Free);
        assert_eq!(g.relation(4), Relation::Floor);
        let text = g.to_text(&l);
        assert_eq!(parse_contact(&text, &[1, 2, 3, 4]).graph, g);
    }

    #[test]
    fn obj_export_counts() {
        let l = layout(vec![gb(1, "table", [10, 0, 10], [8, 7, 8]), gb(2, "vase", [10, 7, 10], [2, 3, 2])]);
        let s = to_obj(&l);
        assert_eq!(s.lines().filter(|x| x.starts_with("v ")).count(), 16);
        assert_eq!(s.lines().filter(|x| x.starts_with("f ")).count(), 24);
    }
}
