// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment runner behind the `sparselift` binary.
//!
//! A run is described by an [`ExperimentConfig`] read from TOML, adjusted
//! by `SPARSELIFT_*` environment variables and then by command-line flags.
//! Every run writes its artifacts, the resolved `config.toml` and a
//! `manifest.json` with SHA-256 hashes of each file.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod svg;

use std::path::{Path, PathBuf};

pub use commands::{run, CliError, CliResult, OutputFormat, RunOptions};
pub use config::{parse_config_with_env, ConfigErrors, ExperimentConfig, ExperimentKind, ENV_PREFIX};

pub const DEFAULT_OUT: &str = "sparselift-out";

/// Settings given as flags; they take precedence over the file and environment.
#[derive(Debug, Clone, Default)]
pub struct FlagOverrides {
    pub kind: Option<ExperimentKind>,
    pub master_seed: Option<u64>,
    /// Raw `(dotted.key, TOML value)` pairs.
    pub extra: Vec<(String, String)>,
}

/// Read `path` (or start from an empty document), then apply `env` and `flags`.
pub fn load_config<I>(path: Option<&Path>, env: I, flags: &FlagOverrides) -> CliResult<ExperimentConfig>
where
    I: IntoIterator<Item = (String, String)>,
{
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| CliError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))))?,
        None => String::new(),
    };
    if path.is_none() && flags.kind.is_none() {
        return Err(CliError::Usage("`run` needs --config".into()));
    }
    let as_env = |key: &str| format!("{ENV_PREFIX}{}", key.replace('.', "__").to_ascii_uppercase());
    let mut pairs: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    if let Some(k) = flags.kind {
        pairs.push((as_env("kind"), format!("\"{}\"", commands::kind_name(k))));
    }
    if let Some(s) = flags.master_seed {
        pairs.push((as_env("master_seed"), s.to_string()));
    }
    pairs.extend(flags.extra.iter().map(|(k, v)| (as_env(k), v.clone())));
    parse_config_with_env(&text, pairs).map_err(CliError::Config)
}

/// Output directory: the flag, else `output_dir` from the config, else [`DEFAULT_OUT`].
pub fn resolve_out(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}
