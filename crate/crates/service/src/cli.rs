//! The `lap` command line.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use lap_core::assembly::{infer_contact_graph, parse_contact};
use lap_core::grid::{build_grid_layout, GridLayout};
use lap_core::perturb::{build_corpus, sample_perturbation, to_jsonl, CorpusConfig, Emit};
use lap_core::refine::{refine_with_image, ExternalPolicy, Policy, RefineError, RulePolicy, StopPolicy};
use lap_core::synth::SynthConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::bench::{self, BenchMode, BenchOptions, PolicyKind};
use crate::config::Config;
use crate::corpus::{self, load_corpus_scene};
use crate::scene_file::{self, load_layout, load_scene};
use crate::server;
use crate::session::SessionStore;

#[derive(Parser, Debug)]
#[command(name = "lap", version, about = "Grid layout refinement, benchmarking and training-record tools")]
pub struct Cli {
    /// TOML config file; LAP_* environment variables override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Canonicalize a camera-space scene file into a grid layout.
    Canonicalize {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Perturb a layout and write the perturbation with its inverse.
    Perturb {
        #[arg(long, conflicts_with = "scene", required_unless_present = "scene")]
        layout: Option<PathBuf>,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Iteratively refine a scene and write the trajectory.
    Refine {
        #[arg(long, conflicts_with = "layout", required_unless_present = "layout")]
        scene: Option<PathBuf>,
        #[arg(long)]
        layout: Option<PathBuf>,
        /// Contact-graph text; defaults to the scene's own or one inferred from geometry.
        #[arg(long)]
        contacts: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = PolicyKind::Rule)]
        policy: PolicyKind,
        #[arg(long)]
        max_rounds: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Before/after metrics over a corpus directory.
    Bench {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = PolicyKind::Rule)]
        policy: PolicyKind,
        #[arg(long, value_enum, default_value_t = BenchMode::Synthetic)]
        mode: BenchMode,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_rounds: Option<usize>,
        /// Full run as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-scene rows as tab-separated text.
        #[arg(long)]
        rows: Option<PathBuf>,
    },
    /// Emit SFT/DPO training records for a corpus directory.
    Forge {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = EmitArg::Both)]
        emit: EmitArg,
        #[arg(long, default_value_t = 4)]
        candidates: usize,
        #[arg(long)]
        out: PathBuf,
        /// Record counts and the discarded-pair rate as JSON.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Write a synthetic corpus of scene files.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        min_objects: usize,
        #[arg(long, default_value_t = 10)]
        max_objects: usize,
    },
    /// Run the session service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        host: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EmitArg {
    Sft,
    Dpo,
    Both,
}

fn write(path: &Path, text: &str) -> Result<(), String> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn json_text<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("outputs serialize") + "\n"
}

fn scene_layout(path: &Path, cfg: &Config) -> Result<(GridLayout, scene_file::Scene), String> {
    let scene = load_scene(path).map_err(|e| e.to_string())?;
    let layout = build_grid_layout(&scene.boxes, &scene.intrinsics, cfg.grid.delta, cfg.grid.n_theta).map_err(|e| e.to_string())?;
    Ok((layout, scene))
}

pub fn run(cli: Cli) -> Result<(), String> {
    let cfg = Config::load(cli.config.as_deref()).map_err(|e| e.to_string())?;
    match cli.command {
        Command::Canonicalize { scene, out } => {
            let (layout, _) = scene_layout(&scene, &cfg)?;
            write(&out, &scene_file::layout_to_json(&layout))
        }
        Command::Perturb { layout, scene, seed, out } => {
            let base = match (layout, scene) {
                (Some(l), _) => load_layout(&l).map_err(|e| e.to_string())?,
                (None, Some(s)) => scene_layout(&s, &cfg)?.0,
                (None, None) => unreachable!("clap requires one input"),
            };
            let p = sample_perturbation(&base, &cfg.perturb, &mut ChaCha8Rng::seed_from_u64(seed));
            write(&out, &json_text(&json!({ "perturbed": p.perturbed, "perturb_seq": p.perturb_seq, "gt_seq": p.gt_seq })))
        }
        Command::Refine { scene, layout, contacts, policy, max_rounds, out } => {
            let (start, image, scene_contacts) = match (scene, layout) {
                (Some(s), _) => {
                    let (l, sc) = scene_layout(&s, &cfg)?;
                    (l, sc.image, sc.contacts)
                }
                (None, Some(l)) => (load_layout(&l).map_err(|e| e.to_string())?, None, None),
                (None, None) => unreachable!("clap requires one input"),
            };
            let mut rcfg = cfg.refine.clone();
            if let Some(r) = max_rounds {
                rcfg.max_rounds = r;
            }
            let contact_text = match contacts {
                Some(p) => Some(std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?),
                None => scene_contacts,
            };
            let ids: Vec<u32> = start.objects.iter().map(|o| o.id).collect();
            let graph = match contact_text {
                Some(t) => parse_contact(&t, &ids).graph,
                None => infer_contact_graph(&start, &cfg.exclusions),
            };
            let p: Box<dyn Policy> = match policy {
                PolicyKind::Rule => Box::new(RulePolicy::new(graph)),
                PolicyKind::Stop => Box::new(StopPolicy),
                PolicyKind::External => Box::new(ExternalPolicy::from_config(&rcfg).ok_or("no external endpoint configured")?),
            };
            match refine_with_image(&start, image.as_deref(), p.as_ref(), &rcfg) {
                Ok(t) => {
                    eprintln!("{} rounds, converged: {}", t.rounds_used, t.converged);
                    write(&out, &json_text(&t))
                }
                Err(RefineError::Policy { partial, source }) => {
                    write(&out, &json_text(&partial))?;
                    Err(format!("{source} (partial trajectory written to {})", out.display()))
                }
                Err(e) => Err(e.to_string()),
            }
        }
        Command::Bench { corpus, policy, mode, seed, max_rounds, out, rows } => {
            let mut opts = BenchOptions::from_config(&cfg, policy, mode);
            if let Some(s) = seed {
                opts.seed = s;
            }
            if let Some(r) = max_rounds {
                opts.refine.max_rounds = r;
            }
            let run = bench::run_benchmark(&corpus, &opts).map_err(|e| e.to_string())?;
            print!("{}", bench::aggregate_table(&run));
            eprintln!("{}", bench::describe(&run));
            for q in &run.quarantine {
                eprintln!("quarantined {}: {}", q.scene, q.error);
            }
            if let Some(p) = out {
                write(&p, &json_text(&run))?;
            }
            if let Some(p) = rows {
                write(&p, &bench::scene_table(&run))?;
            }
            Ok(())
        }
        Command::Forge { corpus, seed, emit, candidates, out, stats } => {
            let paths = corpus::list_scenes(&corpus).map_err(|e| format!("{}: {e}", corpus.display()))?;
            let loaded: Vec<_> = paths
                .par_iter()
                .map(|p| load_corpus_scene(p, &cfg.grid, &cfg.exclusions).map_err(|e| format!("{}: {e}", p.display())))
                .collect::<Result<_, _>>()?;
            let scenes: Vec<_> = loaded.iter().map(|l| l.corpus_scene()).collect();
            let ccfg = CorpusConfig {
                seed,
                perturb: cfg.perturb.clone(),
                exclusions: cfg.exclusions.clone(),
                dpo_candidates: candidates,
                emit: match emit {
                    EmitArg::Sft => Emit::Sft,
                    EmitArg::Dpo => Emit::Dpo,
                    EmitArg::Both => Emit::Both,
                },
                ..CorpusConfig::default()
            };
            let (records, st) = build_corpus(&scenes, &ccfg)?;
            write(&out, &to_jsonl(&records))?;
            eprintln!(
                "{} records ({} SFT, {} DPO) from {} scenes; {:.1}% of candidate pairs discarded",
                records.len(),
                st.sft_records,
                st.dpo_records,
                st.scenes,
                100.0 * st.pairs.discard_rate()
            );
            if let Some(p) = stats {
                write(&p, &json_text(&json!({ "stats": st, "discard_rate": st.pairs.discard_rate() })))?;
            }
            Ok(())
        }
        Command::Synth { out, count, seed, min_objects, max_objects } => {
            let synth = SynthConfig { min_objects, max_objects, grid: cfg.grid_config(), ..SynthConfig::default() };
            let paths = corpus::write_synthetic_corpus(&out, count, seed, &synth).map_err(|e| format!("{}: {e}", out.display()))?;
            eprintln!("wrote {} scenes to {}", paths.len(), out.display());
            Ok(())
        }
        Command::Serve { port, host } => {
            let addr = format!("{}:{}", host.unwrap_or_else(|| cfg.server.host.clone()), port.unwrap_or(cfg.server.port));
            let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            runtime.block_on(server::serve(SessionStore::new(cfg), &addr)).map_err(|e| e.to_string())
        }
    }
}
