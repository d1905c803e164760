//! In-memory editing sessions with undo history.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use lap_core::actions::{self, ActionSequence, Diagnostic, Strictness, Violation};
use lap_core::assembly::{self, parse_contact, ContactDiagnostic, ContactGraph, DEFAULT_CLEARANCE};
use lap_core::grid::{build_grid_layout, GridLayout};
use lap_core::metrics::{self, MetricReport};
use lap_core::perturb::correction_between;
use lap_core::refine::{refine_with_image, ExternalPolicy, Policy, PolicyError, RefineConfig, RefineError, RulePolicy, StopPolicy, Trajectory};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::PolicyKind;
use crate::config::Config;
use crate::scene_file::{self, Scene};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("policy failed: {source}")]
    Policy { summary: Box<TrajectorySummary>, source: PolicyError },
}

/// A scene under edit. `history[k]` holds the k-th applied sequence and the
/// state it produced; replaying the sequences from `initial` gives `current`.
#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub scene: Scene,
    pub initial: GridLayout,
    pub current: GridLayout,
    pub history: Vec<(ActionSequence, GridLayout)>,
    pub graph: Option<ContactGraph>,
    pub refine: RefineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActResult {
    pub state: GridLayout,
    pub applied: ActionSequence,
    pub diagnostics: Vec<Diagnostic>,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub rounds_used: usize,
    pub converged: bool,
    pub sequences: Vec<ActionSequence>,
    pub diagnostics: Vec<Vec<Diagnostic>>,
    pub states: Vec<GridLayout>,
    pub state: GridLayout,
}

impl From<&Trajectory> for TrajectorySummary {
    fn from(t: &Trajectory) -> Self {
        Self {
            rounds_used: t.rounds_used,
            converged: t.converged,
            sequences: t.sequences.clone(),
            diagnostics: t.diagnostics.clone(),
            states: t.states.clone(),
            state: t.last().clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssembleResult {
    pub state: GridLayout,
    pub graph: String,
    pub diagnostics: Vec<ContactDiagnostic>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Grid,
    Camera,
    Mesh,
}

impl Session {
    fn push(&mut self, seq: ActionSequence, state: GridLayout) {
        self.current = state.clone();
        self.history.push((seq, state));
    }

    /// Lenient parse and apply; rejected lines come back as diagnostics.
    pub fn act(&mut self, text: &str) -> Result<ActResult, SessionError> {
        let parsed = actions::parse(text, Strictness::Lenient).map_err(|e| SessionError::BadRequest(e.to_string()))?;
        let (next, violations) = actions::apply_lenient(&self.current, &parsed.sequence);
        if !parsed.sequence.is_empty() {
            self.push(parsed.sequence.clone(), next);
        }
        Ok(ActResult {
            state: self.current.clone(),
            applied: parsed.sequence,
            diagnostics: parsed.diagnostics,
            violations: violations.iter().map(Violation::to_string).collect(),
        })
    }

    pub fn undo(&mut self) -> GridLayout {
        self.history.pop();
        self.current = self.history.last().map(|h| h.1.clone()).unwrap_or_else(|| self.initial.clone());
        self.current.clone()
    }

    /// Replays the history from the initial layout.
    pub fn replay(&self) -> GridLayout {
        self.history.iter().fold(self.initial.clone(), |l, (seq, _)| actions::apply_lenient(&l, seq).0)
    }

    fn policy(&self, kind: PolicyKind) -> Result<Box<dyn Policy + Send + Sync>, SessionError> {
        Ok(match kind {
            PolicyKind::Stop => Box::new(StopPolicy),
            PolicyKind::Rule => {
                let graph = self
                    .graph
                    .clone()
                    .unwrap_or_else(|| assembly::infer_contact_graph(&self.current, &metrics::ExclusionConfig::default()));
                Box::new(RulePolicy::new(graph))
            }
            PolicyKind::External => Box::new(
                ExternalPolicy::from_config(&self.refine)
                    .ok_or_else(|| SessionError::BadRequest("no external endpoint configured".into()))?,
            ),
        })
    }

    /// Runs refinement from the current state; every round joins the history.
    pub fn refine(&mut self, kind: PolicyKind, rounds: Option<usize>) -> Result<TrajectorySummary, SessionError> {
        let mut cfg = self.refine.clone();
        if let Some(r) = rounds {
            cfg.max_rounds = r;
        }
        let policy = self.policy(kind)?;
        let result = refine_with_image(&self.current, self.scene.image.as_deref(), policy.as_ref(), &cfg);
        let traj = match result {
            Ok(t) => t,
            Err(RefineError::Policy { partial, source }) => {
                self.record(&partial);
                return Err(SessionError::Policy { summary: Box::new(TrajectorySummary::from(partial.as_ref())), source });
            }
            Err(e) => return Err(SessionError::BadRequest(e.to_string())),
        };
        self.record(&traj);
        Ok(TrajectorySummary::from(&traj))
    }

    fn record(&mut self, t: &Trajectory) {
        for (seq, state) in t.sequences.iter().zip(&t.states[1..]) {
            self.push(seq.clone(), state.clone());
        }
    }

    /// Metrics of the current state against the session's own scene or
    /// against another ground-truth scene.
    pub fn metrics(&self, gt: Option<&Scene>) -> Result<MetricReport, SessionError> {
        let (gt_layout, gt_scene) = match gt {
            Some(s) => {
                let cfg = &self.initial.config;
                let l = build_grid_layout(&s.boxes, &s.intrinsics, cfg.delta, cfg.n_theta)
                    .map_err(|e| SessionError::BadRequest(e.to_string()))?;
                (l, s)
            }
            None => (self.initial.clone(), &self.scene),
        };
        metrics::evaluate(&self.current, &gt_layout, &gt_scene.boxes, &gt_scene.intrinsics, &metrics::ExclusionConfig::default())
            .map_err(|e| SessionError::BadRequest(e.to_string()))
    }

    /// Settles the current state under a contact graph. The settling shows
    /// up in the history as vertical moves.
    pub fn assemble(&mut self, contact_text: &str) -> AssembleResult {
        let ids: Vec<u32> = self.current.objects.iter().map(|o| o.id).collect();
        let parsed = parse_contact(contact_text, &ids);
        let settled = assembly::settle_with_graph(&self.current, &parsed.graph, DEFAULT_CLEARANCE);
        let seq = correction_between(&self.current, &settled);
        if !seq.is_stop_only() {
            let state = actions::apply_lenient(&self.current, &seq).0;
            self.push(seq, state);
        }
        let graph = parsed.graph.to_text(&self.current);
        self.graph = Some(parsed.graph);
        AssembleResult { state: self.current.clone(), graph, diagnostics: parsed.diagnostics }
    }

    pub fn export(&self, format: ExportFormat) -> String {
        match format {
            ExportFormat::Grid => scene_file::layout_to_json(&self.current),
            ExportFormat::Camera => {
                let scene = Scene { boxes: self.current.to_camera(), ..self.scene.clone() };
                scene_file::scene_to_json(&scene)
            }
            ExportFormat::Mesh => assembly::to_obj(&self.current),
        }
    }
}

/// All sessions. Each session sits behind its own lock, so requests on one
/// session are serialized while different sessions proceed in parallel.
#[derive(Default)]
pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    pub config: Config,
}

impl SessionStore {
    pub fn new(config: Config) -> Self {
        Self { sessions: RwLock::default(), config }
    }

    pub fn create(&self, scene: Scene) -> Result<(String, GridLayout), SessionError> {
        let g = &self.config.grid;
        let layout = build_grid_layout(&scene.boxes, &scene.intrinsics, g.delta, g.n_theta)
            .map_err(|e| SessionError::BadRequest(e.to_string()))?;
        let graph = scene.contacts.as_ref().map(|t| parse_contact(t, &scene.ids()).graph);
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = Session {
            id: id.clone(),
            scene,
            initial: layout.clone(),
            current: layout.clone(),
            history: Vec::new(),
            graph,
            refine: self.config.refine.clone(),
        };
        self.sessions.write().expect("session map lock").insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok((id, layout))
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("session map lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Runs `f` with exclusive access to one session.
    pub fn with<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> T) -> Result<T, SessionError> {
        let handle = self
            .sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_string()))?;
        let mut session = handle.lock().unwrap_or_else(|p| p.into_inner());
        Ok(f(&mut session))
    }
}
