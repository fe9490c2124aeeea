//! Declarative TOML run configuration with CLI flag overrides (flags win).
//!
//! ```toml
//! schema_version = 1
//!
//! [run]
//! condition = "simple"        # baseline | simple | iterative | text_reflection
//! format = "numerical"        # natural | discrete | numerical
//! k = 3
//! n = 1                        # iterative verification rounds
//! r = 1                        # text-reflection rounds
//! seed = 42
//! temperature = 1.0
//! max_output_tokens = 1024
//! workers = 2
//! attribute_errors = true
//!
//! [backends.default]           # applied to roles without their own section
//! kind = "mock"
//! fixture = "fixtures/run.jsonl"
//!
//! [backends.reasoner]          # roles: planner, reasoner, verifier, judge,
//! kind = "http_chat"           #        synthesizer
//! endpoint_url = "http://localhost:8000/v1/chat/completions"
//! auth_env_var = "CHAT_API_KEY"
//! model_id = "my-model"
//! timeout_secs = 60.0
//! max_retries = 3
//! requests_per_minute = 60
//! ```
//!
//! Relative fixture paths resolve against the config file's directory.

use crate::backends::BackendConfig;
use crate::instructions::InstructionFormat;
use crate::pipeline::{Condition, RoleBackends, RunConfig};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {0}: {1}")]
    Parse(String, String),
    #[error("config {0}: schema_version {1} (expected {CONFIG_SCHEMA_VERSION})")]
    SchemaVersion(String, u32),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    schema_version: u32,
    #[serde(default)]
    run: RunSection,
    #[serde(default)]
    backends: BTreeMap<String, BackendConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunSection {
    condition: String,
    format: String,
    k: u32,
    n: u32,
    r: u32,
    seed: u64,
    temperature: f64,
    max_output_tokens: u32,
    workers: usize,
    attribute_errors: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            condition: "baseline".into(),
            format: "numerical".into(),
            k: 1,
            n: 1,
            r: 1,
            seed: 0,
            temperature: 1.0,
            max_output_tokens: 1024,
            workers: 1,
            attribute_errors: true,
        }
    }
}

/// Flag-level overrides; every set field wins over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub condition: Option<String>,
    pub format: Option<String>,
    pub k: Option<u32>,
    pub n: Option<u32>,
    pub r: Option<u32>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub temperature: Option<f64>,
}

#[derive(Debug)]
pub struct LoadedConfig {
    pub run: RunConfig,
    pub workers: usize,
}

fn parse_condition(name: &str, n: u32, r: u32) -> Result<Condition, ConfigError> {
    match name {
        "baseline" => Ok(Condition::Baseline),
        "simple" => Ok(Condition::Simple),
        "iterative" => Ok(Condition::Iterative { n }),
        "text_reflection" | "text-reflection" => Ok(Condition::TextReflection { r }),
        other => Err(ConfigError::Invalid(format!("unknown condition: {other}"))),
    }
}

fn resolve_fixture(cfg: &mut BackendConfig, base: &Path) {
    if let Some(fixture) = &cfg.fixture {
        if fixture.is_relative() {
            cfg.fixture = Some(base.join(fixture));
        }
    }
}

/// Loads and validates a config file, applying overrides.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<LoadedConfig, ConfigError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Parse(display.clone(), e.to_string()))?;
    let file: FileConfig =
        toml::from_str(&text).map_err(|e| ConfigError::Parse(display.clone(), e.to_string()))?;
    if file.schema_version != CONFIG_SCHEMA_VERSION {
        return Err(ConfigError::SchemaVersion(display, file.schema_version));
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    build_run_config(file, overrides, base)
}

/// Builds the default all-mock config without a file; used when `run` is
/// invoked with flags only.
pub fn default_config(overrides: &Overrides) -> Result<LoadedConfig, ConfigError> {
    build_run_config(
        FileConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            run: RunSection::default(),
            backends: BTreeMap::new(),
        },
        overrides,
        Path::new("."),
    )
}

fn build_run_config(
    file: FileConfig,
    overrides: &Overrides,
    fixture_base: &Path,
) -> Result<LoadedConfig, ConfigError> {
    let run = file.run;
    let condition_name = overrides.condition.clone().unwrap_or(run.condition);
    let n = overrides.n.unwrap_or(run.n);
    let r = overrides.r.unwrap_or(run.r);
    let condition = parse_condition(&condition_name, n, r)?;
    let format_name = overrides.format.clone().unwrap_or(run.format);
    let instruction_format: InstructionFormat =
        format_name.parse().map_err(ConfigError::Invalid)?;

    let mut backends = file.backends;
    for cfg in backends.values_mut() {
        resolve_fixture(cfg, fixture_base);
    }
    let default_backend = backends.get("default").cloned();
    let role_cfg = |role: &str| -> Result<BackendConfig, ConfigError> {
        backends
            .get(role)
            .cloned()
            .or_else(|| default_backend.clone())
            .ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "no backend for role '{role}' (add [backends.{role}] or [backends.default])"
                ))
            })
    };
    let role_backends = if backends.is_empty() {
        RoleBackends::all_mock(None)
    } else {
        RoleBackends {
            planner: role_cfg("planner")?,
            reasoner: role_cfg("reasoner")?,
            verifier: role_cfg("verifier")?,
            judge: role_cfg("judge")?,
            synthesizer: role_cfg("synthesizer")?,
        }
    };
    let run_config = RunConfig {
        condition,
        instruction_format,
        k: overrides.k.unwrap_or(run.k),
        seed: overrides.seed.unwrap_or(run.seed),
        temperature: overrides.temperature.unwrap_or(run.temperature),
        max_output_tokens: run.max_output_tokens,
        attribute_errors: run.attribute_errors,
        backends: role_backends,
    };
    run_config
        .validate()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(LoadedConfig {
        run: run_config,
        workers: overrides.workers.unwrap_or(run.workers).max(1),
    })
}
