//! Structured indoor-layout engine: canonical grid layouts, an edit-action
//! language, physical-plausibility metrics, refinement policies, training
//! record synthesis and gravity-based scene assembly.

pub mod actions;
pub mod geom;
pub mod grid;
pub mod scene;
pub mod film;
pub mod metrics;
pub mod assembly;
pub mod prompts;
pub mod refine;
pub mod synth;
pub mod perturb;
