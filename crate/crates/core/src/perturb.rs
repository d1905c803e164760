//! Training-data synthesis: reversible perturbations of ground-truth layouts,
//! corrupted ("degraded") corrective sequences, metric-filtered preference
//! pairs and the SFT/DPO record stream.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{self, Action, ActionSequence, Strictness, MIN_RESIZE};
use crate::grid::GridLayout;
use crate::metrics::{self, ExclusionConfig};
use crate::prompts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbConfig {
    pub p_continue: f64,
    /// MOVE components are drawn from `-move_range..=move_range`.
    pub move_range: i32,
    /// ROTATE_Y from `±1..=rotate_range`.
    pub rotate_range: i32,
    /// RESIZE from `±1..=resize_range`.
    pub resize_range: i32,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self { p_continue: 0.5, move_range: 3, rotate_range: 4, resize_range: 2 }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.p_continue) {
            return Err(format!("p_continue must be in [0, 1), got {}", self.p_continue));
        }
        if self.move_range < 1 || self.rotate_range < 1 || self.resize_range < 1 {
            return Err("parameter ranges must allow a nonzero action".into());
        }
        if -self.resize_range < MIN_RESIZE {
            return Err(format!("resize_range must be at most {}", -MIN_RESIZE));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub perturbed: GridLayout,
    pub perturb_seq: ActionSequence,
    pub gt_seq: ActionSequence,
}

fn nonzero(rng: &mut impl Rng, range: i32) -> i32 {
    let v = rng.random_range(1..=range);
    if rng.random_bool(0.5) {
        -v
    } else {
        v
    }
}

/// Perturbs distinct objects (each with 1–3 distinct action types), stopping
/// after each object with probability `1 - p_continue`. Moves never push an
/// object below the floor, so the perturbation is valid under strict
/// application.
pub fn sample_perturbation(layout: &GridLayout, cfg: &PerturbConfig, rng: &mut impl Rng) -> Perturbation {
    let mut order: Vec<usize> = (0..layout.len()).collect();
    order.shuffle(rng);
    let mut seq = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        if k > 0 && !rng.random_bool(cfg.p_continue) {
            break;
        }
        let mut kinds = [0u8, 1, 2];
        kinds.shuffle(rng);
        let count = rng.random_range(1..=3);
        seq.push(Action::Select(i));
        for &kind in &kinds[..count] {
            seq.push(match kind {
                0 => {
                    let floor = layout.objects[i].pos[1];
                    loop {
                        let d = [0; 3].map(|_| rng.random_range(-cfg.move_range..=cfg.move_range));
                        if d != [0, 0, 0] && floor + d[1] >= 0 {
                            break Action::Move(d);
                        }
                    }
                }
                1 => Action::RotateY(nonzero(rng, cfg.rotate_range)),
                _ => Action::Resize(nonzero(rng, cfg.resize_range)),
            });
        }
    }
    seq.push(Action::Stop);
    let perturb_seq = ActionSequence(seq);
    let (perturbed, _) = actions::apply_lenient(layout, &perturb_seq);
    let gt_seq = actions::invert(&perturb_seq, layout, &perturbed).expect("perturbation keeps the object set");
    Perturbation { perturbed, perturb_seq, gt_seq }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DegradationKind {
    NumericalShift,
    MagnitudeUndershoot,
    MagnitudeOvershoot,
    NuisanceInsertion,
    OverCorrection,
    MissingActions,
    PrematureStop,
    WrongActionType,
    DirectionFlip,
}

impl DegradationKind {
    pub const ALL: [DegradationKind; 9] = [
        Self::NumericalShift,
        Self::MagnitudeUndershoot,
        Self::MagnitudeOvershoot,
        Self::NuisanceInsertion,
        Self::OverCorrection,
        Self::MissingActions,
        Self::PrematureStop,
        Self::WrongActionType,
        Self::DirectionFlip,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Self::NumericalShift => "numerical-shift",
            Self::MagnitudeUndershoot => "magnitude-undershoot",
            Self::MagnitudeOvershoot => "magnitude-overshoot",
            Self::NuisanceInsertion => "nuisance-insertion",
            Self::OverCorrection => "over-correction",
            Self::MissingActions => "missing-actions",
            Self::PrematureStop => "premature-stop",
            Self::WrongActionType => "wrong-action-type",
            Self::DirectionFlip => "direction-flip",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DegradeError {
    #[error("degradation {0:?} could not produce a differing sequence")]
    DegenerateDegradation(Vec<DegradationKind>),
    #[error("degradation needs 1 or 2 kinds, got {0}")]
    KindCount(usize),
}

pub const DEGRADE_ATTEMPTS: usize = 8;

/// Body of a sequence without its trailing `STOP`.
fn body(seq: &ActionSequence) -> Vec<Action> {
    seq.0.iter().copied().take_while(|a| *a != Action::Stop).collect()
}

fn finish(mut body: Vec<Action>) -> ActionSequence {
    // Drop SELECTs left without a transform.
    let mut cleaned = Vec::with_capacity(body.len() + 1);
    for (k, a) in body.iter().enumerate() {
        if let Action::Select(_) = a {
            if !body.get(k + 1).is_some_and(Action::is_transform) {
                continue;
            }
        }
        cleaned.push(*a);
    }
    body = cleaned;
    body.push(Action::Stop);
    ActionSequence(body)
}

fn map_params(a: Action, f: &mut impl FnMut(i32) -> i32) -> Action {
    match a {
        Action::Move(d) => Action::Move(d.map(&mut *f)),
        Action::RotateY(d) => Action::RotateY(f(d)),
        Action::Resize(d) => Action::Resize(f(d).max(MIN_RESIZE)),
        other => other,
    }
}

/// Scales a parameter, keeping nonzero values nonzero.
fn scale(v: i32, factor: f64) -> i32 {
    if v == 0 {
        return 0;
    }
    let r = (v as f64 * factor).round() as i32;
    if r == 0 {
        v.signum()
    } else {
        r
    }
}

fn transform_positions(body: &[Action]) -> Vec<usize> {
    (0..body.len()).filter(|&k| body[k].is_transform()).collect()
}

fn random_transform(rng: &mut impl Rng) -> Action {
    match rng.random_range(0..3) {
        0 => loop {
            let d = [0; 3].map(|_| rng.random_range(-3..=3));
            if d != [0, 0, 0] {
                break Action::Move(d);
            }
        },
        1 => Action::RotateY(nonzero(rng, 4)),
        _ => Action::Resize(nonzero(rng, 2)),
    }
}

fn degrade_once(body: &[Action], kind: DegradationKind, n_objects: usize, rng: &mut impl Rng) -> Option<Vec<Action>> {
    let mut out = body.to_vec();
    let transforms = transform_positions(body);
    match kind {
        DegradationKind::NumericalShift => {
            let &k = transforms.choose(rng)?;
            out[k] = map_params(out[k], &mut |v| v + nonzero(rng, 3));
        }
        DegradationKind::MagnitudeUndershoot | DegradationKind::MagnitudeOvershoot => {
            if transforms.is_empty() {
                return None;
            }
            let factor = if kind == DegradationKind::MagnitudeUndershoot {
                rng.random_range(0.3..0.7)
            } else {
                rng.random_range(1.5..2.5)
            };
            out = out.into_iter().map(|a| map_params(a, &mut |v| scale(v, factor))).collect();
        }
        DegradationKind::NuisanceInsertion => {
            let selects: Vec<usize> = (0..body.len()).filter(|&k| matches!(body[k], Action::Select(_))).collect();
            let (at, target) = match selects.choose(rng) {
                Some(&k) => (k + 1, None),
                None if n_objects > 0 => (0, Some(rng.random_range(0..n_objects))),
                None => return None,
            };
            let mut ins = Vec::new();
            if let Some(t) = target {
                ins.push(Action::Select(t));
            }
            if target.is_none() && rng.random_bool(0.5) {
                let Action::Select(i) = body[at - 1] else { unreachable!() };
                ins.push(Action::Select(i));
            } else if rng.random_bool(0.5) {
                let d = loop {
                    let d = [0; 3].map(|_| rng.random_range(-3..=3));
                    if d != [0, 0, 0] && d[1] >= 0 {
                        break d;
                    }
                };
                ins.extend([Action::Move(d), Action::Move(d.map(|v| -v))]);
            } else {
                let d = nonzero(rng, 4);
                ins.extend([Action::RotateY(d), Action::RotateY(-d)]);
            }
            out.splice(at..at, ins);
        }
        DegradationKind::OverCorrection => {
            let touched = ActionSequence(body.to_vec()).touched_objects();
            let untouched: Vec<usize> = (0..n_objects).filter(|i| !touched.contains(i)).collect();
            let &i = untouched.choose(rng)?;
            out.push(Action::Select(i));
            for _ in 0..rng.random_range(1..=2) {
                out.push(random_transform(rng));
            }
        }
        DegradationKind::MissingActions => {
            if transforms.is_empty() {
                return None;
            }
            let mut drop: BTreeSet<usize> = transforms.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
            if drop.is_empty() {
                drop.insert(*transforms.choose(rng)?);
            }
            out = out.into_iter().enumerate().filter(|(k, _)| !drop.contains(k)).map(|(_, a)| a).collect();
        }
        DegradationKind::PrematureStop => out.clear(),
        DegradationKind::WrongActionType => {
            let &k = transforms.choose(rng)?;
            out[k] = match out[k] {
                Action::Move(d) => {
                    let m = d.iter().map(|v| v.abs()).max().unwrap_or(1).clamp(1, 4);
                    if rng.random_bool(0.5) {
                        Action::RotateY(m)
                    } else {
                        Action::Resize(m.min(2))
                    }
                }
                Action::RotateY(d) => {
                    let mut v = [0; 3];
                    v[if rng.random_bool(0.5) { 0 } else { 2 }] = d;
                    Action::Move(v)
                }
                Action::Resize(d) => {
                    if rng.random_bool(0.5) {
                        Action::RotateY(d)
                    } else {
                        Action::Move([d, 0, 0])
                    }
                }
                other => other,
            };
        }
        DegradationKind::DirectionFlip => {
            if transforms.is_empty() {
                return None;
            }
            out = out.into_iter().map(|a| map_params(a, &mut |v| -v)).collect();
        }
    }
    Some(out)
}

/// Corrupts a ground-truth sequence with one or two degradations. The result
/// always parses strictly and differs textually from `gt_seq`.
pub fn degrade(
    gt_seq: &ActionSequence,
    kinds: &[DegradationKind],
    n_objects: usize,
    rng: &mut impl Rng,
) -> Result<ActionSequence, DegradeError> {
    if kinds.is_empty() || kinds.len() > 2 {
        return Err(DegradeError::KindCount(kinds.len()));
    }
    let source = actions::serialize(gt_seq);
    for _ in 0..DEGRADE_ATTEMPTS {
        let mut cur = body(gt_seq);
        let mut ok = true;
        for &kind in kinds {
            match degrade_once(&cur, kind, n_objects, rng) {
                Some(next) => cur = next,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let out = finish(cur);
        let text = actions::serialize(&out);
        if text != source && actions::parse_strict(&text).is_ok() {
            return Ok(out);
        }
    }
    Err(DegradeError::DegenerateDegradation(kinds.to_vec()))
}

/// `(SVR, collisions, rotation error, L1 position error)` against the
/// ground-truth layout; lower is better everywhere.
pub fn metric_vector(pred: &GridLayout, gt: &GridLayout, excl: &ExclusionConfig) -> [f64; 4] {
    let gt_pairs = metrics::colliding_pairs(gt);
    [
        metrics::support_violation_rate(pred, excl),
        metrics::collision_count(pred, Some(&gt_pairs)) as f64,
        metrics::rotation_error(pred, gt, excl).unwrap_or(0.0),
        metrics::position_error(pred, gt) as f64,
    ]
}

const DOMINANCE_EPS: f64 = 1e-9;

/// `a` is no worse than `b` anywhere and strictly better somewhere.
pub fn dominates(a: &[f64; 4], b: &[f64; 4]) -> bool {
    a.iter().zip(b).all(|(x, y)| *x <= *y + DOMINANCE_EPS) && a.iter().zip(b).any(|(x, y)| *x < *y - DOMINANCE_EPS)
}

/// One touched-object set contains the other.
pub fn comparable_subsets(a: &ActionSequence, b: &ActionSequence) -> bool {
    let (sa, sb) = (a.touched_objects(), b.touched_objects());
    sa.is_subset(&sb) || sb.is_subset(&sa)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptContext {
    pub image: String,
    pub layout_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub context: PromptContext,
    pub selected: ActionSequence,
    pub rejected: ActionSequence,
    pub provenance: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub sequence: ActionSequence,
    pub kinds: Vec<DegradationKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairStats {
    pub kept: usize,
    pub discarded: usize,
}

impl PairStats {
    pub fn discard_rate(&self) -> f64 {
        let total = self.kept + self.discarded;
        if total == 0 {
            0.0
        } else {
            self.discarded as f64 / total as f64
        }
    }
}

/// Keeps a (gt, candidate) pair only if the candidate's touched objects are
/// nested with the ground truth's and the ground truth's outcome strictly
/// dominates the candidate's.
pub fn build_dpo_pairs(
    image: &str,
    layout: &GridLayout,
    gt_seq: &ActionSequence,
    candidates: &[Candidate],
    gt_layout: &GridLayout,
    excl: &ExclusionConfig,
) -> (Vec<PreferencePair>, PairStats) {
    let mut stats = PairStats::default();
    let mut pairs = Vec::new();
    let gt_text = actions::serialize(gt_seq);
    let gt_vec = metric_vector(&actions::apply_lenient(layout, gt_seq).0, gt_layout, excl);
    let origin = if gt_seq.is_stop_only() { "gt-stop" } else { "perturbed" };
    for c in candidates {
        let keep = actions::serialize(&c.sequence) != gt_text
            && comparable_subsets(gt_seq, &c.sequence)
            && dominates(&gt_vec, &metric_vector(&actions::apply_lenient(layout, &c.sequence).0, gt_layout, excl));
        if !keep {
            stats.discarded += 1;
            continue;
        }
        stats.kept += 1;
        let mut provenance = vec![origin.to_string()];
        provenance.extend(c.kinds.iter().map(|k| k.tag().to_string()));
        pairs.push(PreferencePair {
            context: PromptContext { image: image.to_string(), layout_text: prompts::layout_block(layout) },
            selected: gt_seq.clone(),
            rejected: c.sequence.clone(),
            provenance,
        });
    }
    (pairs, stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Sft,
    Dpo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub scene_id: String,
    pub seed: u64,
    pub image: String,
    pub init: String,
    pub degradations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub kind: RecordKind,
    pub system: String,
    pub user: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub completion: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub selected: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rejected: Option<String>,
    pub meta: RecordMeta,
}

pub fn build_sft_record(layout: &GridLayout, gt_seq: &ActionSequence, meta: RecordMeta) -> TrainingRecord {
    TrainingRecord {
        kind: RecordKind::Sft,
        system: prompts::planner_system_prompt(&layout.config),
        user: prompts::planner_user_prompt(layout),
        completion: Some(actions::serialize(gt_seq)),
        selected: None,
        rejected: None,
        meta,
    }
}

pub fn build_dpo_record(layout: &GridLayout, pair: &PreferencePair, meta: RecordMeta) -> TrainingRecord {
    TrainingRecord {
        kind: RecordKind::Dpo,
        system: prompts::planner_system_prompt(&layout.config),
        user: prompts::planner_user_prompt(layout),
        completion: None,
        selected: Some(actions::serialize(&pair.selected)),
        rejected: Some(actions::serialize(&pair.rejected)),
        meta,
    }
}

/// Corrective sequence taking `from` to `to` (objects matched by id): one
/// block per differing object in list order.
pub fn correction_between(from: &GridLayout, to: &GridLayout) -> ActionSequence {
    let n = from.config.n_theta as i32;
    let mut seq = Vec::new();
    for (i, a) in from.objects.iter().enumerate() {
        let Some(b) = to.get(a.id) else { continue };
        let mut block = Vec::new();
        let d = [0, 1, 2].map(|k| b.pos[k] - a.pos[k]);
        if d != [0, 0, 0] {
            block.push(Action::Move(d));
        }
        let mut r = (b.yaw_idx as i32 - a.yaw_idx as i32).rem_euclid(n);
        if r > n / 2 {
            r -= n;
        }
        if r != 0 {
            block.push(Action::RotateY(r));
        }
        if a.size != b.size {
            let ds = actions::best_inverse_resize(a.size, b.size);
            if ds != 0 {
                block.push(Action::Resize(ds));
            }
        }
        if !block.is_empty() {
            seq.push(Action::Select(i));
            seq.extend(block);
        }
    }
    seq.push(Action::Stop);
    ActionSequence(seq)
}

/// Shifts `layout` vertically so its lowest bottom matches `reference`'s.
pub fn align_ground(layout: &GridLayout, reference: &GridLayout) -> GridLayout {
    let low = |l: &GridLayout| l.objects.iter().map(|o| o.pos[1]).min().unwrap_or(0);
    let dy = low(reference) - low(layout);
    let mut out = layout.clone();
    for o in &mut out.objects {
        o.pos[1] = (o.pos[1] + dy).max(0);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Mixture {
    pub stop: f64,
    pub perturbed: f64,
    /// Share initialized from externally produced layouts; folded into
    /// `perturbed` for scenes that have none.
    pub external: f64,
}

impl Default for Mixture {
    fn default() -> Self {
        Self { stop: 0.2, perturbed: 0.5, external: 0.3 }
    }
}

impl Mixture {
    pub fn validate(&self) -> Result<(), String> {
        let parts = [self.stop, self.perturbed, self.external];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(format!("mixture fractions must be in [0, 1] and sum to 1, got {parts:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emit {
    Sft,
    Dpo,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub mixture: Mixture,
    pub perturb: PerturbConfig,
    /// Degraded candidates drawn per scene for preference pairs.
    pub dpo_candidates: usize,
    pub emit: Emit,
    pub exclusions: ExclusionConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mixture: Mixture::default(),
            perturb: PerturbConfig::default(),
            dpo_candidates: 4,
            emit: Emit::Both,
            exclusions: ExclusionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusScene {
    pub id: String,
    pub image: String,
    pub gt: GridLayout,
    /// Layout produced by an external model for this scene, if any.
    pub external_init: Option<GridLayout>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub scenes: usize,
    pub stop_scenes: usize,
    pub perturbed_scenes: usize,
    pub external_scenes: usize,
    pub sft_records: usize,
    pub dpo_records: usize,
    pub pairs: PairStats,
    pub degenerate_candidates: usize,
}

/// Stable per-scene stream selector (FNV-1a over the scene id).
fn scene_stream(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn scene_rng(seed: u64, scene_id: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(scene_stream(scene_id));
    rng
}

fn scene_records(scene: &CorpusScene, cfg: &CorpusConfig) -> (Vec<TrainingRecord>, CorpusStats) {
    let mut rng = scene_rng(cfg.seed, &scene.id);
    let mut stats = CorpusStats { scenes: 1, ..Default::default() };
    let u: f64 = rng.random();
    let (init, start, gt_seq) = if u < cfg.mixture.stop {
        stats.stop_scenes += 1;
        ("gt", scene.gt.clone(), ActionSequence::stop())
    } else if let (Some(ext), true) = (&scene.external_init, u >= cfg.mixture.stop + cfg.mixture.perturbed) {
        stats.external_scenes += 1;
        let start = align_ground(ext, &scene.gt);
        let seq = correction_between(&start, &scene.gt);
        ("external", start, seq)
    } else {
        stats.perturbed_scenes += 1;
        let p = sample_perturbation(&scene.gt, &cfg.perturb, &mut rng);
        ("perturbed", p.perturbed, p.gt_seq)
    };
    let meta = |degradations: Vec<String>| RecordMeta {
        scene_id: scene.id.clone(),
        seed: cfg.seed,
        image: scene.image.clone(),
        init: init.to_string(),
        degradations,
    };

    let mut out = Vec::new();
    if cfg.emit != Emit::Dpo {
        out.push(build_sft_record(&start, &gt_seq, meta(Vec::new())));
        stats.sft_records += 1;
    }
    if cfg.emit != Emit::Sft {
        let mut candidates = Vec::new();
        for _ in 0..cfg.dpo_candidates {
            let count = rng.random_range(1..=2);
            let kinds: Vec<DegradationKind> = DegradationKind::ALL.choose_multiple(&mut rng, count).copied().collect();
            match degrade(&gt_seq, &kinds, start.len(), &mut rng) {
                Ok(sequence) => candidates.push(Candidate { sequence, kinds }),
                Err(_) => stats.degenerate_candidates += 1,
            }
        }
        let (pairs, ps) = build_dpo_pairs(&scene.image, &start, &gt_seq, &candidates, &scene.gt, &cfg.exclusions);
        stats.pairs = ps;
        for p in &pairs {
            out.push(build_dpo_record(&start, p, meta(p.provenance.clone())));
            stats.dpo_records += 1;
        }
    }
    (out, stats)
}

/// Records for every scene, in scene order. Each scene draws from its own
/// stream keyed by `(seed, scene id)`, so the output does not depend on
/// thread scheduling.
pub fn build_corpus(scenes: &[CorpusScene], cfg: &CorpusConfig) -> Result<(Vec<TrainingRecord>, CorpusStats), String> {
    cfg.mixture.validate()?;
    cfg.perturb.validate()?;
    let per_scene: Vec<_> = scenes.par_iter().map(|s| scene_records(s, cfg)).collect();
    let mut records = Vec::new();
    let mut stats = CorpusStats::default();
    for (r, s) in per_scene {
        records.extend(r);
        stats.scenes += s.scenes;
        stats.stop_scenes += s.stop_scenes;
        stats.perturbed_scenes += s.perturbed_scenes;
        stats.external_scenes += s.external_scenes;
        stats.sft_records += s.sft_records;
        stats.dpo_records += s.dpo_records;
        stats.pairs.kept += s.pairs.kept;
        stats.pairs.discarded += s.pairs.discarded;
        stats.degenerate_candidates += s.degenerate_candidates;
    }
    Ok((records, stats))
}

/// Newline-delimited JSON, one record per line.
pub fn to_jsonl(records: &[TrainingRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("records serialize"));
        s.push('\n');
    }
    s
}

/// Checks a sequence against the strict grammar by round-tripping its text.
pub fn is_strict(seq: &ActionSequence) -> bool {
    actions::parse(&actions::serialize(seq), Strictness::Strict).is_ok_and(|p| &p.sequence == seq)
}
