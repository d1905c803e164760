//! Iterative refinement: a policy proposes an action sequence per round and
//! the layout is updated until the policy answers with a lone `STOP` or the
//! round limit is reached.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{self, Action, ActionSequence, Diagnostic, Strictness};
use crate::assembly::{ContactGraph, Relation};
use crate::grid::{GridBox, GridLayout};
use crate::metrics::{self, SUPPORT_OVERLAP};
use crate::prompts;

pub const MAX_ROUNDS_LIMIT: usize = 32;
/// Gap left between two boxes separated by the rule policy, grid units.
pub const SEPARATION_MARGIN: i32 = 1;
/// Extra distance tried beyond the minimal separation when that is blocked.
const MAX_EXTRA_STEPS: i32 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub max_rounds: usize,
    pub strictness: Strictness,
    pub endpoint: Option<String>,
    pub timeout_secs: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { max_rounds: 5, strictness: Strictness::Lenient, endpoint: None, timeout_secs: 60 }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_rounds == 0 || self.max_rounds > MAX_ROUNDS_LIMIT {
            return Err(format!("max_rounds must be in 1..={MAX_ROUNDS_LIMIT}, got {}", self.max_rounds));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `L⁰ … Lⁿ`; one more than `sequences`.
    pub states: Vec<GridLayout>,
    pub sequences: Vec<ActionSequence>,
    /// Lines the lenient parser dropped, per round.
    pub diagnostics: Vec<Vec<Diagnostic>>,
    pub converged: bool,
    pub rounds_used: usize,
}

impl Trajectory {
    fn start(layout: &GridLayout) -> Self {
        Self { states: vec![layout.clone()], sequences: Vec::new(), diagnostics: Vec::new(), converged: false, rounds_used: 0 }
    }

    pub fn last(&self) -> &GridLayout {
        self.states.last().expect("trajectory has an initial state")
    }

    /// Number of non-`STOP` actions over all rounds.
    pub fn action_count(&self) -> usize {
        self.sequences.iter().flat_map(|s| s.actions()).filter(|a| **a != Action::Stop).count()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("round {round}: request timed out")]
    Timeout { round: usize },
    #[error("round {round}: transport error: {message}")]
    Transport { round: usize, message: String },
    #[error("round {round}: empty response")]
    EmptyResponse { round: usize },
    #[error("round {round}: {message}")]
    InvalidSequence { round: usize, message: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("invalid refine config: {0}")]
    InvalidConfig(String),
    #[error("contact graph has a support cycle: {0:?}")]
    CyclicSupport(Vec<u32>),
    #[error("{source}")]
    Policy { partial: Box<Trajectory>, source: PolicyError },
}

pub struct PolicyContext<'a> {
    pub image: Option<&'a str>,
    pub layout: &'a GridLayout,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Proposal {
    pub sequence: ActionSequence,
    pub diagnostics: Vec<Diagnostic>,
}

pub trait Policy {
    fn propose(&self, ctx: &PolicyContext<'_>) -> Result<Proposal, PolicyError>;
}

pub fn refine(layout: &GridLayout, policy: &dyn Policy, cfg: &RefineConfig) -> Result<Trajectory, RefineError> {
    refine_with_image(layout, None, policy, cfg)
}

pub fn refine_with_image(
    layout: &GridLayout,
    image: Option<&str>,
    policy: &dyn Policy,
    cfg: &RefineConfig,
) -> Result<Trajectory, RefineError> {
    cfg.validate().map_err(RefineError::InvalidConfig)?;
    let mut traj = Trajectory::start(layout);
    for round in 0..cfg.max_rounds {
        let current = traj.last().clone();
        let fail = |traj: Trajectory, source| RefineError::Policy { partial: Box::new(traj), source };
        let proposal = match policy.propose(&PolicyContext { image, layout: &current, round }) {
            Ok(p) => p,
            Err(e) => return Err(fail(traj, e)),
        };
        let next = match actions::apply(&current, &proposal.sequence, cfg.strictness) {
            Ok(n) => n,
            Err(e) => return Err(fail(traj, PolicyError::InvalidSequence { round, message: e.to_string() })),
        };
        let stop = proposal.sequence.is_stop_only();
        traj.states.push(next);
        traj.sequences.push(proposal.sequence);
        traj.diagnostics.push(proposal.diagnostics);
        traj.rounds_used += 1;
        if stop {
            traj.converged = true;
            break;
        }
    }
    Ok(traj)
}

pub struct StopPolicy;

impl Policy for StopPolicy {
    fn propose(&self, _ctx: &PolicyContext<'_>) -> Result<Proposal, PolicyError> {
        Ok(Proposal { sequence: ActionSequence::stop(), diagnostics: Vec::new() })
    }
}

/// Geometric baseline: snaps objects onto their supporters (or the floor)
/// and pushes apart interpenetrating axis-aligned bounds. Never rotates or
/// resizes.
pub struct RulePolicy {
    graph: ContactGraph,
}

impl RulePolicy {
    pub fn new(mut graph: ContactGraph) -> Self {
        graph.break_cycles();
        Self { graph }
    }
}

impl Policy for RulePolicy {
    fn propose(&self, ctx: &PolicyContext<'_>) -> Result<Proposal, PolicyError> {
        Ok(Proposal { sequence: rule_policy(ctx.layout, &self.graph), diagnostics: Vec::new() })
    }
}

/// Runs [`RulePolicy`] until it stops or `cfg.max_rounds` is exhausted.
pub fn iterate_rule_to_fixpoint(layout: &GridLayout, graph: &ContactGraph, cfg: &RefineConfig) -> Result<Trajectory, RefineError> {
    if let Some(cycle) = graph.find_cycle() {
        return Err(RefineError::CyclicSupport(cycle));
    }
    refine(layout, &RulePolicy::new(graph.clone()), cfg)
}

/// Support structure of a layout under a contact graph, by object index.
struct Structure {
    parent: Vec<Option<usize>>,
    free: Vec<bool>,
    children: Vec<Vec<usize>>,
    /// Parents before children.
    order: Vec<usize>,
}

impl Structure {
    fn new(layout: &GridLayout, graph: &ContactGraph) -> Self {
        let n = layout.len();
        let index: BTreeMap<u32, usize> = layout.objects.iter().enumerate().map(|(i, o)| (o.id, i)).collect();
        let mut parent = vec![None; n];
        let mut free = vec![false; n];
        for (i, o) in layout.objects.iter().enumerate() {
            match graph.relation(o.id) {
                Relation::On(s) => parent[i] = index.get(&s).copied().filter(|&p| p != i),
                Relation::Free => free[i] = true,
                Relation::Floor => {}
            }
        }
        let mut children = vec![Vec::new(); n];
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(i);
            }
        }
        let mut order: Vec<usize> = (0..n).filter(|&i| parent[i].is_none()).collect();
        let mut k = 0;
        while k < order.len() {
            let i = order[k];
            order.extend(children[i].iter().copied());
            k += 1;
        }
        // Leftovers only occur on cyclic input; keep them so every object is visited.
        for i in 0..n {
            if !order.contains(&i) {
                order.push(i);
            }
        }
        Self { parent, free, children, order }
    }

    /// `i` and everything transitively resting on it.
    fn group(&self, i: usize) -> Vec<usize> {
        let mut out = vec![i];
        let mut k = 0;
        while k < out.len() {
            for &c in &self.children[out[k]] {
                if !out.contains(&c) {
                    out.push(c);
                }
            }
            k += 1;
        }
        out
    }

    fn is_ancestor(&self, a: usize, b: usize) -> bool {
        let mut cur = self.parent[b];
        let mut hops = 0;
        while let Some(p) = cur {
            if p == a {
                return true;
            }
            hops += 1;
            if hops > self.parent.len() {
                return false;
            }
            cur = self.parent[p];
        }
        false
    }

    /// Pairs the de-collision pass is responsible for.
    fn relevant(&self, i: usize, j: usize) -> bool {
        !(self.free[i] && self.free[j]) && !self.is_ancestor(i, j) && !self.is_ancestor(j, i)
    }
}

fn footprint_area(b: &GridBox) -> i64 {
    b.size[0] as i64 * b.size[2] as i64
}

fn well_supported(child: &GridBox, parent: &GridBox, n_theta: u32) -> bool {
    metrics::footprint_overlap(child, parent, n_theta) >= SUPPORT_OVERLAP * footprint_area(child) as f64 - 1e-9
}

fn aabb_hit(a: &GridBox, b: &GridBox, n_theta: u32) -> bool {
    metrics::aabb_overlap_volume(a, b, n_theta) > 1e-9
}

fn collision_pairs(objs: &[GridBox], st: &Structure, n_theta: u32) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..objs.len() {
        for j in i + 1..objs.len() {
            if st.relevant(i, j) && aabb_hit(&objs[i], &objs[j], n_theta) {
                out.push((i, j));
            }
        }
    }
    out
}

fn shift(objs: &mut [GridBox], group: &[usize], d: [i32; 3]) {
    for &g in group {
        for k in 0..3 {
            objs[g].pos[k] += d[k];
        }
    }
}

/// Vertical snapping in support order: floor objects to y = 0, supported
/// objects onto their supporter's top (pulled horizontally toward it first if
/// less than half their footprint rests on it). Supportees travel with their
/// supporter.
fn de_float(objs: &mut [GridBox], st: &Structure, n_theta: u32) {
    for &i in &st.order {
        if st.free[i] {
            continue;
        }
        let mut d = [0i32; 3];
        match st.parent[i] {
            None => d[1] = -objs[i].pos[1],
            Some(p) => {
                if !well_supported(&objs[i], &objs[p], n_theta) {
                    let from = objs[i].pos;
                    let to = objs[p].pos;
                    let mut best = [to[0] - from[0], to[2] - from[2]];
                    for t in 1..10 {
                        let f = t as f64 / 10.0;
                        let step = [
                            ((to[0] - from[0]) as f64 * f).round() as i32,
                            ((to[2] - from[2]) as f64 * f).round() as i32,
                        ];
                        let mut probe = objs[i].clone();
                        probe.pos[0] += step[0];
                        probe.pos[2] += step[1];
                        if well_supported(&probe, &objs[p], n_theta) {
                            best = step;
                            break;
                        }
                    }
                    d[0] = best[0];
                    d[2] = best[1];
                }
                d[1] = objs[p].top() - objs[i].pos[1];
            }
        }
        if d != [0, 0, 0] {
            let group = st.group(i);
            shift(objs, &group, d);
        }
    }
}

/// Horizontal displacement candidates separating `m` from `o`'s bounds,
/// shortest first (the minimum-penetration axis leads).
fn separations(m: &GridBox, o: &GridBox, n_theta: u32, extra: i32) -> Vec<[i32; 3]> {
    let (mlo, mhi) = m.aabb(n_theta);
    let (olo, ohi) = o.aabb(n_theta);
    let up = |x: f64| (x - 1e-9).ceil() as i32;
    let mut c = vec![
        [up(ohi[0] - mlo[0]) + SEPARATION_MARGIN + extra, 0, 0],
        [-(up(mhi[0] - olo[0]) + SEPARATION_MARGIN + extra), 0, 0],
        [0, 0, up(ohi[2] - mlo[2]) + SEPARATION_MARGIN + extra],
        [0, 0, -(up(mhi[2] - olo[2]) + SEPARATION_MARGIN + extra)],
    ];
    c.sort_by_key(|d| d[0].abs() + d[2].abs());
    c
}

/// Separates AABB-colliding pairs one at a time. The smaller footprint
/// yields (lower id on ties) and free objects never move. A displacement is
/// taken only if it keeps the mover on its supporter and lowers the number
/// of colliding pairs, preferring ones that leave the moved group clear.
fn de_collide(objs: &mut [GridBox], st: &Structure, n_theta: u32) {
    let budget = 4 * objs.len() * objs.len() + 8;
    let mut skipped: Vec<(usize, usize)> = Vec::new();
    for _ in 0..budget {
        let pairs = collision_pairs(objs, st, n_theta);
        let Some(&(i, j)) = pairs.iter().find(|p| !skipped.contains(p)) else { return };
        let mut movers = vec![i, j];
        movers.sort_by_key(|&k| (footprint_area(&objs[k]), objs[k].id));
        movers.retain(|&k| !st.free[k]);

        let mut chosen: Option<(Vec<usize>, [i32; 3])> = None;
        'tiers: for strict in [true, false] {
            for &m in &movers {
                let other = if m == i { j } else { i };
                let group = st.group(m);
                for extra in 0..=MAX_EXTRA_STEPS {
                    for d in separations(&objs[m], &objs[other], n_theta, extra) {
                        let mut trial = objs.to_vec();
                        shift(&mut trial, &group, d);
                        if let Some(p) = st.parent[m] {
                            if !well_supported(&trial[m], &trial[p], n_theta) {
                                continue;
                            }
                        }
                        let ok = if strict {
                            group.iter().all(|&g| {
                                (0..trial.len()).all(|k| group.contains(&k) || !st.relevant(g, k) || !aabb_hit(&trial[g], &trial[k], n_theta))
                            })
                        } else {
                            collision_pairs(&trial, st, n_theta).len() < pairs.len()
                        };
                        if ok {
                            chosen = Some((group, d));
                            break 'tiers;
                        }
                    }
                }
            }
        }
        match chosen {
            Some((group, d)) => shift(objs, &group, d),
            None => skipped.push((i, j)),
        }
    }
}

/// One de-floating pass followed by one de-collision pass, as
/// `SELECT`/`MOVE` blocks ending in `STOP`; a lone `STOP` when nothing needs
/// fixing.
pub fn rule_policy(layout: &GridLayout, graph: &ContactGraph) -> ActionSequence {
    let mut graph = graph.clone();
    graph.break_cycles();
    let st = Structure::new(layout, &graph);
    let n_theta = layout.n_theta();
    let mut objs = layout.objects.clone();
    de_float(&mut objs, &st, n_theta);
    de_collide(&mut objs, &st, n_theta);

    let mut seq = Vec::new();
    for (i, (before, after)) in layout.objects.iter().zip(&objs).enumerate() {
        let d = [0, 1, 2].map(|k| after.pos[k] - before.pos[k]);
        if d != [0, 0, 0] {
            seq.push(Action::Select(i));
            seq.push(Action::Move(d));
        }
    }
    seq.push(Action::Stop);
    ActionSequence(seq)
}

/// Any endpoint accepting `{system, user, image}` and answering `{text}`
/// with action lines.
pub struct ExternalPolicy {
    endpoint: String,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct PlannerRequest<'a> {
    system: String,
    user: String,
    image: Option<&'a str>,
}

#[derive(Deserialize)]
struct PlannerResponse {
    text: String,
}

impl ExternalPolicy {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self { endpoint: endpoint.into(), agent }
    }

    pub fn from_config(cfg: &RefineConfig) -> Option<Self> {
        cfg.endpoint.as_ref().map(|e| Self::new(e.clone(), Duration::from_secs(cfg.timeout_secs)))
    }
}

impl Policy for ExternalPolicy {
    fn propose(&self, ctx: &PolicyContext<'_>) -> Result<Proposal, PolicyError> {
        let round = ctx.round;
        let body = PlannerRequest {
            system: prompts::planner_system_prompt(&ctx.layout.config),
            user: prompts::planner_user_prompt(ctx.layout),
            image: ctx.image,
        };
        let transport = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => PolicyError::Timeout { round },
            other => PolicyError::Transport { round, message: other.to_string() },
        };
        let mut resp = self.agent.post(&self.endpoint).send_json(&body).map_err(transport)?;
        let reply: PlannerResponse = resp.body_mut().read_json().map_err(transport)?;
        if reply.text.trim().is_empty() {
            return Err(PolicyError::EmptyResponse { round });
        }
        let parsed = actions::parse(&reply.text, Strictness::Lenient)
            .map_err(|e| PolicyError::InvalidSequence { round, message: e.to_string() })?;
        Ok(Proposal { sequence: parsed.sequence, diagnostics: parsed.diagnostics })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridConfig;

    fn gb(id: u32, pos: [i32; 3], size: [i32; 3]) -> GridBox {
        GridBox { id, class_name: "thing".into(), bbox2d: [0; 4], pos, size, yaw_idx: 12 }
    }

    fn layout(objs: Vec<GridBox>) -> GridLayout {
        GridLayout::new(GridConfig::default(), objs)
    }

    struct Scripted(Vec<&'static str>);

    impl Policy for Scripted {
        fn propose(&self, ctx: &PolicyContext<'_>) -> Result<Proposal, PolicyError> {
            let text = self.0[ctx.round.min(self.0.len() - 1)];
            let p = actions::parse(text, Strictness::Lenient).unwrap();
            Ok(Proposal { sequence: p.sequence, diagnostics: p.diagnostics })
        }
    }

    #[test]
    fn stop_policy_converges_in_one_round() {
        let l = layout(vec![gb(0, [5, 0, 5], [3, 3, 3])]);
        let t = refine(&l, &StopPolicy, &RefineConfig::default()).unwrap();
        assert!(t.converged);
        assert_eq!(t.rounds_used, 1);
        assert_eq!(t.states, vec![l.clone(), l]);
    }

    #[test]
    fn round_limit_without_stop() {
        let l = layout(vec![gb(0, [5, 0, 5], [3, 3, 3])]);
        let cfg = RefineConfig { max_rounds: 1, ..Default::default() };
        let t = refine(&l, &Scripted(vec!["SELECT obj_0\nMOVE [1, 0, 0]"]), &cfg).unwrap();
        assert_eq!(t.rounds_used, 1);
        assert!(!t.converged);
        assert_eq!(t.last().objects[0].pos, [6, 0, 5]);
        assert!(refine(&l, &StopPolicy, &RefineConfig { max_rounds: 0, ..Default::default() }).is_err());
        assert!(refine(&l, &StopPolicy, &RefineConfig { max_rounds: 33, ..Default::default() }).is_err());
    }

    #[test]
    fn strict_mode_reports_partial_trajectory() {
        let l = layout(vec![gb(0, [5, 0, 5], [3, 3, 3])]);
        let cfg = RefineConfig { strictness: Strictness::Strict, ..Default::default() };
        let err = refine(&l, &Scripted(vec!["SELECT obj_0\nMOVE [1, 0, 0]", "SELECT obj_0\nMOVE [0, -4, 0]"]), &cfg).unwrap_err();
        match err {
            RefineError::Policy { partial, source } => {
                assert_eq!(partial.rounds_used, 1);
                assert!(matches!(source, PolicyError::InvalidSequence { round: 1, .. }));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn rule_grounds_floating_floor_object() {
        let l = layout(vec![gb(0, [5, 0, 5], [3, 3, 3]), gb(1, [20, 5, 20], [3, 3, 3])]);
        let seq = rule_policy(&l, &ContactGraph::all_floor(&l));
        assert_eq!(seq.0, vec![Action::Select(1), Action::Move([0, -5, 0]), Action::Stop]);
    }

    #[test]
    fn rule_on_clean_layout_stops() {
        let l = layout(vec![gb(0, [5, 0, 5], [3, 3, 3]), gb(1, [20, 0, 20], [3, 3, 3])]);
        assert!(rule_policy(&l, &ContactGraph::all_floor(&l)).is_stop_only());
        let t = iterate_rule_to_fixpoint(&l, &ContactGraph::all_floor(&l), &RefineConfig::default()).unwrap();
        assert_eq!(t.rounds_used, 1);
        let empty = layout(vec![]);
        assert!(rule_policy(&empty, &ContactGraph::default()).is_stop_only());
    }

    #[test]
    fn rule_separates_along_min_penetration_axis() {
        // 10x10 footprints overlapping 2 units in x and 7 in z (offset 8 and 3).
        let l = layout(vec![gb(0, [10, 0, 10], [10, 5, 10]), gb(1, [18, 0, 13], [10, 4, 10])]);
        let seq = rule_policy(&l, &ContactGraph::all_floor(&l));
        // Equal footprints, so the lower id yields.
        assert_eq!(seq.0, vec![Action::Select(0), Action::Move([-3, 0, 0]), Action::Stop]);
    }

    #[test]
    fn stacked_chain_lands_in_one_round() {
        let l = layout(vec![
            gb(1, [10, 4, 10], [8, 5, 8]),
            gb(2, [10, 12, 10], [4, 3, 4]),
            gb(3, [10, 18, 10], [2, 2, 2]),
        ]);
        let mut g = ContactGraph::all_floor(&l);
        g.relations.insert(2, Relation::On(1));
        g.relations.insert(3, Relation::On(2));
        let t = iterate_rule_to_fixpoint(&l, &g, &RefineConfig::default()).unwrap();
        assert!(t.converged && t.rounds_used <= 3);
        let end = t.last();
        assert_eq!(metrics::support_violation_rate(end, &metrics::ExclusionConfig::default()), 0.0);
        assert_eq!([end.objects[0].pos[1], end.objects[1].pos[1], end.objects[2].pos[1]], [0, 5, 8]);
    }

    #[test]
    fn cyclic_graph_is_rejected() {
        let l = layout(vec![gb(1, [10, 4, 10], [8, 5, 8]), gb(2, [10, 12, 10], [4, 3, 4])]);
        let mut g = ContactGraph::all_floor(&l);
        g.relations.insert(1, Relation::On(2));
        g.relations.insert(2, Relation::On(1));
        assert!(matches!(iterate_rule_to_fixpoint(&l, &g, &RefineConfig::default()), Err(RefineError::CyclicSupport(_))));
    }

    #[test]
    fn trajectory_serializes_sequences_as_text() {
        let l = layout(vec![gb(0, [5, 0, 5], [3, 3, 3])]);
        let t = refine(&l, &StopPolicy, &RefineConfig::default()).unwrap();
        let v = serde_json::to_value(&t).unwrap();
        assert_eq!(v["sequences"][0], "STOP");
        let back: Trajectory = serde_json::from_value(v).unwrap();
        assert_eq!(back, t);
    }
}
