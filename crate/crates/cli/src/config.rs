// SPDX-License-Identifier: MIT OR Apache-2.0

//! Declarative experiment configuration in TOML.
//!
//! Every section is optional and falls back to documented defaults, except
//! `kind`. Unknown keys and out-of-range values are collected together and
//! reported with their line number where the key appears in the file.
//!
//! Environment variables prefixed `SPARSELIFT_` override file values before
//! validation; `__` separates nesting levels, so
//! `SPARSELIFT_DICT_LEARN__SOLVER__LAMBDA=0.2` sets `dict_learn.solver.lambda`.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sparselift::dictlearn::DictLearnConfig;
use sparselift::ident::{ClassifierConfig, ClusterDgpSpec};
use sparselift::phase::{PhaseSolver, SweepSpec};
use sparselift::sae::{SaeArchitecture, SaeTrainConfig};
use sparselift::solvers::{binomial, Method, SolverConfig, StepRule, EXHAUSTIVE_BUDGET};
use sparselift::synthdgp::{DictionaryKind, ValueDist};

pub const ENV_PREFIX: &str = "SPARSELIFT_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Gen,
    Solve,
    LearnDict,
    TrainSae,
    Identcheck,
    Eval,
    PhaseSweep,
    Pipeline,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Gen,
        ExperimentKind::Solve,
        ExperimentKind::LearnDict,
        ExperimentKind::TrainSae,
        ExperimentKind::Identcheck,
        ExperimentKind::Eval,
        ExperimentKind::PhaseSweep,
        ExperimentKind::Pipeline,
    ];
}

/// Synthetic sparse-coding data: `samples` observations `y = Θz + ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub samples: usize,
    pub value_dist: ValueDist,
    pub dictionary_kind: DictionaryKind,
    pub noise_sigma: f64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            m: 16,
            n: 32,
            k: 2,
            samples: 4096,
            value_dist: ValueDist::UniformSigned,
            dictionary_kind: DictionaryKind::GaussianNormalized,
            noise_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    Ista,
    #[default]
    Fista,
    Omp,
    Exhaustive,
}

/// Per-sample inference settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub method: SolveMethod,
    pub lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub step_rule: StepRule,
    /// Sparsity for `omp` and `exhaustive`; `None` uses `dgp.k`.
    pub k: Option<usize>,
    /// OMP stops once `‖r‖ ≤ residual_tol`.
    pub residual_tol: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            method: SolveMethod::Fista,
            lambda: 0.1,
            max_iters: 1000,
            tol: 1e-8,
            step_rule: StepRule::FixedInverseLipschitz,
            k: None,
            residual_tol: 1e-9,
        }
    }
}

impl SolveConfig {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig { lambda: self.lambda, max_iters: self.max_iters, tol: self.tol, step_rule: self.step_rule }
    }

    pub fn method(&self, dgp_k: usize) -> Method {
        let k = self.k.unwrap_or(dgp_k);
        match self.method {
            SolveMethod::Ista => Method::Ista(self.solver_config()),
            SolveMethod::Fista => Method::Fista(self.solver_config()),
            SolveMethod::Omp => Method::Omp { k_max: k, residual_tol: self.residual_tol },
            SolveMethod::Exhaustive => Method::Exhaustive { k },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Top-activating samples shown per intrusion trial.
    pub top_q: usize,
    /// Intrusion trials per unit.
    pub intrusion_trials: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { top_q: 4, intrusion_trials: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentConfig {
    pub dgp: ClusterDgpSpec,
    pub classifier: ClassifierConfig,
    /// Sub-seed indices; trial `i` uses a seed derived from `master_seed` and `seeds[i]`.
    pub seeds: Vec<u64>,
    pub n_test: usize,
}

impl Default for IdentConfig {
    fn default() -> Self {
        Self {
            dgp: ClusterDgpSpec::default(),
            classifier: ClassifierConfig::default(),
            seeds: (0..5).collect(),
            n_test: 2000,
        }
    }
}

/// A full experiment description.
///
/// The `seed` fields inside module sections are not read: each module's seed
/// is derived from `master_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub dgp: DgpConfig,
    #[serde(default)]
    pub solver: SolveConfig,
    #[serde(default)]
    pub dict_learn: DictLearnConfig,
    #[serde(default)]
    pub sae: SaeTrainConfig,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub ident: IdentConfig,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            master_seed: 0,
            output_dir: None,
            dgp: DgpConfig::default(),
            solver: SolveConfig::default(),
            dict_learn: DictLearnConfig::default(),
            sae: SaeTrainConfig::default(),
            sweep: SweepSpec::default(),
            eval: EvalConfig::default(),
            ident: IdentConfig::default(),
        }
    }

    /// Canonical TOML text; parsing it gives back an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }
}

/// One problem found while reading a config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// 1-based line in the source text, when the key appears there.
    pub line: Option<usize>,
    /// Dotted key path, e.g. `solver.lambda`.
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.key, self.message),
            None => write!(f, "{}: {}", self.key, self.message),
        }
    }
}

/// All errors of one config, in source order where known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

/// Parse and validate `text` with no environment overrides.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
    parse_config_with_env(text, std::iter::empty())
}

/// Parse `text`, apply `SPARSELIFT_*` overrides from `env`, then validate.
pub fn parse_config_with_env<I>(text: &str, env: I) -> Result<ExperimentConfig, ConfigErrors>
where
    I: IntoIterator<Item = (String, String)>,
{
    let locator = KeyLocator::new(text);
    let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigErrors(vec![from_toml_error(&e, text)]))?;
    let mut errors = Vec::new();
    for (name, value) in env {
        if let Some(path) = name.strip_prefix(ENV_PREFIX) {
            if let Err(e) = apply_override(&mut table, path, &value) {
                errors.push(ConfigError { line: None, key: name.clone(), message: e });
            }
        }
    }
    unknown_keys(&mut table, &known_schema(), "", &locator, &mut errors);
    if !table.contains_key("kind") {
        errors.push(ConfigError {
            line: None,
            key: "kind".into(),
            message: format!("missing required field; one of {}", kind_names().join(", ")),
        });
        return Err(ConfigErrors(errors));
    }
    match toml::Value::Table(table).try_into::<ExperimentConfig>() {
        Ok(cfg) => {
            errors.extend(
                validate(&cfg).into_iter().map(|(key, message)| ConfigError { line: locator.find(&key), key, message }),
            );
            if errors.is_empty() {
                return Ok(cfg);
            }
        }
        Err(e) => {
            let key = e.message().split('`').nth(1).unwrap_or("<document>").to_string();
            errors.push(ConfigError { line: locator.find_leaf(&key), key, message: e.message().trim().to_string() });
        }
    }
    errors.sort_by_key(|e| e.line);
    Err(ConfigErrors(errors))
}

fn kind_names() -> Vec<String> {
    ExperimentKind::ALL
        .iter()
        .map(|k| toml::Value::try_from(k).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
        .collect()
}

fn from_toml_error(e: &toml::de::Error, text: &str) -> ConfigError {
    let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    ConfigError { line, key: "<syntax>".into(), message: e.message().trim().to_string() }
}

/// Parse an override value as a TOML scalar or array, falling back to a string.
fn parse_env_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, path: &str, raw: &str) -> Result<(), String> {
    let parts: Vec<String> = path.split("__").map(|p| p.to_ascii_lowercase()).collect();
    if parts.iter().any(String::is_empty) {
        return Err("empty path segment".into());
    }
    let (leaf, parents) = parts.split_last().expect("nonempty");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| format!("`{p}` is not a table"))?;
    }
    cur.insert(leaf.clone(), parse_env_value(raw));
    Ok(())
}

/// Keys that are valid but absent from a serialized default config.
const OPTIONAL_KEYS: &[&str] = &["output_dir", "solver.k", "dict_learn.batch_size", "ident.dgp.observed_dim"];

/// The key tree of a default config, with tables as nested tables.
fn known_schema() -> toml::Table {
    let mut t: toml::Table = toml::from_str(&ExperimentConfig::new(ExperimentKind::Gen).to_toml()).expect("defaults parse");
    for path in OPTIONAL_KEYS {
        let parts: Vec<&str> = path.split('.').collect();
        let (leaf, parents) = parts.split_last().expect("nonempty");
        let mut cur = &mut t;
        for p in parents {
            cur = cur.get_mut(*p).and_then(toml::Value::as_table_mut).expect("schema parent exists");
        }
        cur.insert((*leaf).to_string(), toml::Value::Boolean(true));
    }
    t
}

/// Report and remove keys missing from `schema`.
fn unknown_keys(user: &mut toml::Table, schema: &toml::Table, prefix: &str, loc: &KeyLocator, out: &mut Vec<ConfigError>) {
    let mut unknown = Vec::new();
    for (k, v) in user.iter_mut() {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match schema.get(k) {
            None => unknown.push(ConfigError {
                line: loc.find(&path),
                key: path,
                message: format!(
                    "unknown key; expected one of {}",
                    schema.keys().map(String::as_str).collect::<Vec<_>>().join(", ")
                ),
            }),
            Some(toml::Value::Table(sub)) => {
                if let toml::Value::Table(u) = v {
                    unknown_keys(u, sub, &path, loc, out);
                }
            }
            Some(_) => {}
        }
    }
    for e in unknown {
        user.remove(e.key.rsplit('.').next().expect("nonempty"));
        out.push(e);
    }
}

/// Finds the line where a dotted key is assigned.
struct KeyLocator {
    /// `(full dotted key, 1-based line)` for every assignment and table header.
    entries: Vec<(String, usize)>,
}

impl KeyLocator {
    fn new(text: &str) -> Self {
        let mut entries = Vec::new();
        let mut table = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('[') {
                let name = h.trim_start_matches('[').split(']').next().unwrap_or("").trim();
                table = name.split('.').map(|s| s.trim().trim_matches('"')).collect::<Vec<_>>().join(".");
                entries.push((table.clone(), i + 1));
                continue;
            }
            if let Some((key, _)) = line.split_once('=') {
                let key = key.split('.').map(|s| s.trim().trim_matches('"')).collect::<Vec<_>>().join(".");
                let full = if table.is_empty() { key } else { format!("{table}.{key}") };
                entries.push((full, i + 1));
            }
        }
        Self { entries }
    }

    fn find(&self, path: &str) -> Option<usize> {
        self.entries.iter().find(|(k, _)| k == path).map(|(_, l)| *l)
    }

    /// First assignment whose last path component is `leaf`.
    fn find_leaf(&self, leaf: &str) -> Option<usize> {
        self.entries.iter().find(|(k, _)| k.rsplit('.').next() == Some(leaf)).map(|(_, l)| *l)
    }
}

/// TOML integers are signed 64-bit.
const MAX_SEED: u64 = i64::MAX as u64;

fn check_solver(prefix: &str, s: &SolverConfig, out: &mut Vec<(String, String)>) {
    if !(s.lambda >= 0.0 && s.lambda.is_finite()) {
        out.push((format!("{prefix}.lambda"), format!("must be nonnegative and finite, got {}", s.lambda)));
    }
    if !(s.tol > 0.0 && s.tol.is_finite()) {
        out.push((format!("{prefix}.tol"), format!("must be positive, got {}", s.tol)));
    }
    if s.max_iters == 0 {
        out.push((format!("{prefix}.max_iters"), "must be at least 1".into()));
    }
}

/// Range checks on a typed config, as `(dotted key, message)` pairs.
pub fn validate(cfg: &ExperimentConfig) -> Vec<(String, String)> {
    let mut e: Vec<(String, String)> = Vec::new();
    let mut push = |k: &str, m: String| e.push((k.to_string(), m));
    if cfg.master_seed > MAX_SEED {
        push("master_seed", format!("must be at most {MAX_SEED}"));
    }

    let d = &cfg.dgp;
    if d.m == 0 {
        push("dgp.m", "must be at least 1".into());
    }
    if d.n == 0 {
        push("dgp.n", "must be at least 1".into());
    }
    if d.k > d.n {
        push("dgp.k", format!("must not exceed dgp.n = {}", d.n));
    }
    if d.samples == 0 {
        push("dgp.samples", "must be at least 1".into());
    }
    if !(d.noise_sigma >= 0.0 && d.noise_sigma.is_finite()) {
        push("dgp.noise_sigma", "must be nonnegative and finite".into());
    }
    match d.dictionary_kind {
        DictionaryKind::Identity if d.m != d.n => push("dgp.dictionary_kind", "identity requires m = n".into()),
        DictionaryKind::RandomOrthonormalSubset if d.n > d.m => {
            push("dgp.dictionary_kind", "random-orthonormal-subset requires n ≤ m".into())
        }
        _ => {}
    }

    let s = &cfg.solver;
    if !(s.lambda >= 0.0 && s.lambda.is_finite()) {
        push("solver.lambda", format!("must be nonnegative and finite, got {}", s.lambda));
    }
    if !(s.tol > 0.0 && s.tol.is_finite()) {
        push("solver.tol", format!("must be positive, got {}", s.tol));
    }
    if s.max_iters == 0 {
        push("solver.max_iters", "must be at least 1".into());
    }
    if !(s.residual_tol >= 0.0 && s.residual_tol.is_finite()) {
        push("solver.residual_tol", "must be nonnegative and finite".into());
    }
    let k = s.k.unwrap_or(d.k);
    if k > d.n {
        push("solver.k", format!("must not exceed dgp.n = {}", d.n));
    } else if s.method == SolveMethod::Exhaustive && binomial(d.n, k) > EXHAUSTIVE_BUDGET {
        push("solver.k", format!("exhaustive search over C({}, {k}) supports exceeds the budget {EXHAUSTIVE_BUDGET}", d.n));
    }

    let dl = &cfg.dict_learn;
    if dl.outer_rounds == 0 {
        push("dict_learn.outer_rounds", "must be at least 1".into());
    }
    if dl.batch_size == Some(0) {
        push("dict_learn.batch_size", "must be at least 1".into());
    }

    let sae = &cfg.sae;
    if !(sae.lambda >= 0.0 && sae.lambda.is_finite()) {
        push("sae.lambda", format!("must be nonnegative and finite, got {}", sae.lambda));
    }
    if !(sae.learning_rate >= 0.0 && sae.learning_rate.is_finite()) {
        push("sae.learning_rate", "must be nonnegative and finite".into());
    }
    if sae.batch_size == 0 {
        push("sae.batch_size", "must be at least 1".into());
    }
    if sae.architecture != SaeArchitecture::Vanilla {
        push("sae.architecture", "only vanilla is implemented".into());
    }

    let sw = &cfg.sweep;
    if sw.n == 0 {
        push("sweep.n", "must be at least 1".into());
    }
    if sw.trials_per_cell == 0 {
        push("sweep.trials_per_cell", "must be at least 1".into());
    }
    if sw.k_values.is_empty() {
        push("sweep.k_values", "must not be empty".into());
    } else if let Some(k) = sw.k_values.iter().find(|&&k| k == 0 || k > sw.n) {
        push("sweep.k_values", format!("every k must lie in 1..={}, got {k}", sw.n));
    } else if sw.solver == PhaseSolver::Exhaustive {
        if let Some(k) = sw.k_values.iter().find(|&&k| binomial(sw.n, k) > EXHAUSTIVE_BUDGET) {
            push("sweep.k_values", format!("exhaustive search with k = {k} exceeds the budget {EXHAUSTIVE_BUDGET}"));
        }
    }
    if sw.m_values.is_empty() || sw.m_values.contains(&0) {
        push("sweep.m_values", "must be non-empty with every m ≥ 1".into());
    }

    let ev = &cfg.eval;
    if ev.top_q == 0 {
        push("eval.top_q", "must be at least 1".into());
    }
    if ev.intrusion_trials == 0 {
        push("eval.intrusion_trials", "must be at least 1".into());
    }

    let id = &cfg.ident;
    if id.dgp.n_classes < 2 {
        push("ident.dgp.n_classes", "must be at least 2".into());
    }
    if id.dgp.latent_dim == 0 {
        push("ident.dgp.latent_dim", "must be at least 1".into());
    }
    if !(id.dgp.concentration > 0.0 && id.dgp.concentration.is_finite()) {
        push("ident.dgp.concentration", "must be positive and finite".into());
    }
    if id.dgp.observed_dim.is_some_and(|o| o < id.dgp.latent_dim) {
        push("ident.dgp.observed_dim", "must be at least latent_dim".into());
    }
    let c = &id.classifier;
    if !(c.learning_rate >= 0.0 && c.learning_rate.is_finite()) {
        push("ident.classifier.learning_rate", "must be nonnegative and finite".into());
    }
    if c.batch_size == 0 {
        push("ident.classifier.batch_size", "must be at least 1".into());
    }
    if c.n_train == 0 {
        push("ident.classifier.n_train", "must be at least 1".into());
    }
    if c.hidden.contains(&0) {
        push("ident.classifier.hidden", "widths must be at least 1".into());
    }
    if id.seeds.is_empty() {
        push("ident.seeds", "must not be empty".into());
    }
    if id.seeds.iter().any(|&s| s > MAX_SEED) {
        push("ident.seeds", format!("must be at most {MAX_SEED}"));
    }
    if id.n_test < id.dgp.latent_dim + 2 {
        push("ident.n_test", "must exceed latent_dim + 1 for an affine fit".into());
    }

    check_solver("dict_learn.solver", &dl.solver, &mut e);
    check_solver("sweep.ista", &sw.ista, &mut e);
    let seeds = [
        ("sae.seed", sae.seed),
        ("sweep.seed", sw.seed),
        ("ident.dgp.seed", id.dgp.seed),
        ("ident.classifier.seed", c.seed),
    ];
    for (key, s) in seeds {
        if s > MAX_SEED {
            e.push((key.to_string(), format!("must be at most {MAX_SEED}")));
        }
    }
    e
}
