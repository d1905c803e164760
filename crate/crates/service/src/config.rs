//! Service configuration: a TOML file with environment overrides.

use std::path::Path;

use lap_core::grid::{GridConfig, DEFAULT_DELTA, DEFAULT_N_THETA};
use lap_core::metrics::ExclusionConfig;
use lap_core::perturb::PerturbConfig;
use lap_core::refine::RefineConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("environment variable {var}: {message}")]
    Env { var: &'static str, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridDefaults {
    pub delta: f64,
    pub n_theta: u32,
}

impl Default for GridDefaults {
    fn default() -> Self {
        Self { delta: DEFAULT_DELTA, n_theta: DEFAULT_N_THETA }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSettings {
    /// Worker threads for per-scene evaluation; 0 uses all cores.
    pub workers: usize,
    pub seed: u64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self { workers: 0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerSettings {
    pub host: String,
    pub port: u16,
}

impl Default for ServerSettings {
    fn default() -> Self {
        Self { host: "127.0.0.1".into(), port: 8080 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub grid: GridDefaults,
    pub refine: RefineConfig,
    pub perturb: PerturbConfig,
    pub exclusions: ExclusionConfig,
    pub bench: BenchSettings,
    pub server: ServerSettings,
}

pub const ENV_ENDPOINT: &str = "LAP_ENDPOINT";
pub const ENV_TIMEOUT: &str = "LAP_TIMEOUT_SECS";
pub const ENV_MAX_ROUNDS: &str = "LAP_MAX_ROUNDS";
pub const ENV_DELTA: &str = "LAP_GRID_DELTA";
pub const ENV_N_THETA: &str = "LAP_GRID_N_THETA";

fn env_parse<T: std::str::FromStr>(var: &'static str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| ConfigError::Env { var, message: e.to_string() })
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (defaults if `None`), then applies process environment
    /// overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.display().to_string(), source })?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = get(ENV_ENDPOINT) {
            self.refine.endpoint = if v.trim().is_empty() { None } else { Some(v.trim().to_string()) };
        }
        if let Some(v) = get(ENV_TIMEOUT) {
            self.refine.timeout_secs = env_parse(ENV_TIMEOUT, &v)?;
        }
        if let Some(v) = get(ENV_MAX_ROUNDS) {
            self.refine.max_rounds = env_parse(ENV_MAX_ROUNDS, &v)?;
        }
        if let Some(v) = get(ENV_DELTA) {
            self.grid.delta = env_parse(ENV_DELTA, &v)?;
        }
        if let Some(v) = get(ENV_N_THETA) {
            self.grid.n_theta = env_parse(ENV_N_THETA, &v)?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.grid_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.refine.validate().map_err(ConfigError::Invalid)?;
        self.perturb.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }

    pub fn grid_config(&self) -> GridConfig {
        GridConfig { delta: self.grid.delta, n_theta: self.grid.n_theta, offset: [0.0; 3] }
    }
}
