// SPDX-License-Identifier: MIT OR Apache-2.0

//! One function per experiment kind. Each writes its artifacts plus
//! `config.toml` and `manifest.json` into the output directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;
use sparselift::dictlearn::learn_with;
use sparselift::export::{codes_to_splb, write_matrix_csv};
use sparselift::ident::{run_identifiability, write_trials_csv};
use sparselift::metrics::{
    interpretability_proxy, intrusion_task, match_codes, match_dictionaries, superposition_check,
};
use sparselift::phase::{fit_boundary, k_monotonicity_violations, m_monotonicity_violations, run_phase_sweep};
use sparselift::sae::{amortization_gap, train_sae};
use sparselift::seed::derive_seed;
use sparselift::solvers::{solve_batch, write_solutions_csv, SparseSolution};
use sparselift::synthdgp::{codes_to_matrix, observe, sample_codes, sample_dictionary, LatentCode};
use sparselift::{par, Dictionary, ObservationBatch};

use crate::config::{ConfigErrors, ExperimentConfig, ExperimentKind};
use crate::manifest::{Manifest, OutputDir};
use crate::svg::render_heatmap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// Run-time options that do not change results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: PathBuf,
    pub format: OutputFormat,
    /// Worker threads; `None` uses the default pool.
    pub jobs: Option<usize>,
    /// Dictionary learning writes a snapshot every this many rounds.
    pub snapshot_every: Option<usize>,
    /// `solve` reads these SPLB files instead of generating data.
    pub dictionary: Option<PathBuf>,
    pub observations: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigErrors),
    Usage(String),
    Core(sparselift::Error),
    Io(std::io::Error),
}

impl CliError {
    /// 2 configuration or usage, 3 numeric divergence, 4 I/O, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(sparselift::Error::Io(_)) | CliError::Io(_) => 4,
            CliError::Core(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "invalid configuration:\n{e}"),
            CliError::Usage(e) => write!(f, "{e}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<sparselift::Error> for CliError {
    fn from(e: sparselift::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn kind_name(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::Gen => "gen",
        ExperimentKind::Solve => "solve",
        ExperimentKind::LearnDict => "learn-dict",
        ExperimentKind::TrainSae => "train-sae",
        ExperimentKind::Identcheck => "identcheck",
        ExperimentKind::Eval => "eval",
        ExperimentKind::PhaseSweep => "phase-sweep",
        ExperimentKind::Pipeline => "pipeline",
    }
}

/// Per-module seeds derived from the master seed.
pub fn module_seeds(cfg: &ExperimentConfig) -> BTreeMap<String, u64> {
    let m = cfg.master_seed;
    let mut s = BTreeMap::new();
    for label in ["dictionary", "codes", "noise", "dict-learn", "sae", "sweep", "intrusion"] {
        s.insert(label.to_string(), derive_seed(m, label, &[]));
    }
    for &i in &cfg.ident.seeds {
        s.insert(format!("ident-{i}"), derive_seed(m, "ident", &[i]));
    }
    s
}

/// Run the experiment `cfg.kind` and write everything under `opts.out`.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> CliResult<Manifest> {
    let seeds = module_seeds(cfg);
    let config_text = cfg.to_toml();
    let mut out = OutputDir::create(&opts.out)?;
    out.write("config.toml", config_text.as_bytes())?;
    let ctx = Ctx { cfg, opts, seeds: &seeds };
    par::with_threads(opts.jobs, || -> CliResult<()> {
        match cfg.kind {
            ExperimentKind::Gen => ctx.gen(&mut out).map(|_| ()),
            ExperimentKind::Solve => ctx.solve(&mut out),
            ExperimentKind::LearnDict => ctx.learn_dict(&mut out),
            ExperimentKind::TrainSae => ctx.train_sae(&mut out),
            ExperimentKind::Identcheck => ctx.identcheck(&mut out),
            ExperimentKind::Eval => ctx.eval(&mut out),
            ExperimentKind::PhaseSweep => ctx.phase_sweep(&mut out),
            ExperimentKind::Pipeline => ctx.pipeline(&mut out),
        }
    })?;
    Ok(out.finish(kind_name(cfg.kind), &config_text, seeds)?)
}

struct Data {
    dict: Dictionary,
    codes: Vec<LatentCode>,
    batch: ObservationBatch,
}

impl Data {
    /// True codes, one sample per row.
    fn truth(&self) -> DMatrix<f64> {
        codes_to_matrix(&self.codes).transpose()
    }
}

#[derive(Serialize)]
struct MatrixJson<'a> {
    rows: usize,
    cols: usize,
    /// Row-major.
    data: &'a [f64],
}

fn matrix_json(m: &DMatrix<f64>) -> serde_json::Value {
    let t = m.transpose();
    serde_json::to_value(MatrixJson { rows: m.nrows(), cols: m.ncols(), data: t.as_slice() }).expect("serializable")
}

/// Sample-major code matrix from per-sample solutions.
fn code_matrix(solutions: &[SparseSolution], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(solutions.len(), n, |i, j| solutions[i].code[j])
}

fn read_splb(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    opts: &'a RunOptions,
    seeds: &'a BTreeMap<String, u64>,
}

impl Ctx<'_> {
    fn seed(&self, label: &str) -> u64 {
        self.seeds[label]
    }

    fn data(&self) -> CliResult<Data> {
        let d = &self.cfg.dgp;
        let dict = sample_dictionary(d.m, d.n, d.dictionary_kind, self.seed("dictionary"))?;
        let codes = sample_codes(d.n, d.k, d.value_dist, d.samples, self.seed("codes"))?;
        let batch = observe(&dict, &codes, d.noise_sigma, self.seed("noise"))?;
        Ok(Data { dict, codes, batch })
    }

    /// `stem.csv` or `stem.json` depending on the requested format.
    fn table(
        &self,
        out: &mut OutputDir,
        stem: &str,
        csv: impl FnOnce(&mut Vec<u8>) -> sparselift::Result<()>,
        json: impl FnOnce() -> serde_json::Value,
    ) -> CliResult<()> {
        match self.opts.format {
            OutputFormat::Csv => {
                let mut buf = Vec::new();
                csv(&mut buf)?;
                out.write(&format!("{stem}.csv"), &buf)?;
            }
            OutputFormat::Json => out.write_json(&format!("{stem}.json"), &json())?,
        }
        Ok(())
    }

    fn matrix(&self, out: &mut OutputDir, stem: &str, m: &DMatrix<f64>, index: &str, prefix: &str) -> CliResult<()> {
        self.table(out, stem, |b| write_matrix_csv(b, m, index, prefix), || matrix_json(m))
    }

    fn write_data(&self, out: &mut OutputDir, data: &Data) -> CliResult<()> {
        let truth = data.truth();
        out.write("dictionary.splb", &data.dict.to_splb()?)?;
        out.write("observations.splb", &data.batch.to_splb()?)?;
        out.write("codes.splb", &codes_to_splb(&truth)?)?;
        self.matrix(out, "dictionary", data.dict.atoms(), "row", "atom")?;
        self.matrix(out, "observations", &data.batch.samples().transpose(), "sample", "y")?;
        self.matrix(out, "codes", &truth, "sample", "z")?;
        Ok(out.write_json("superposition.json", &superposition_check(&data.dict))?)
    }

    fn gen(&self, out: &mut OutputDir) -> CliResult<Data> {
        let data = self.data()?;
        self.write_data(out, &data)?;
        Ok(data)
    }

    fn infer(&self, dict: &Dictionary, batch: &ObservationBatch) -> CliResult<DMatrix<f64>> {
        let method = self.cfg.solver.method(self.cfg.dgp.k);
        let solutions = solve_batch(dict, batch, &method).into_iter().collect::<sparselift::Result<Vec<_>>>()?;
        Ok(code_matrix(&solutions, dict.n()))
    }

    fn solve(&self, out: &mut OutputDir) -> CliResult<()> {
        let (dict, batch) = match (&self.opts.dictionary, &self.opts.observations) {
            (Some(d), Some(o)) => {
                (Dictionary::from_splb(&read_splb(d)?)?, ObservationBatch::from_splb(&read_splb(o)?)?)
            }
            (None, None) => {
                let data = self.data()?;
                (data.dict, data.batch)
            }
            _ => return Err(CliError::Usage("--dictionary and --observations must be given together".into())),
        };
        let method = self.cfg.solver.method(self.cfg.dgp.k);
        let solutions = solve_batch(&dict, &batch, &method);
        let failed = solutions.iter().filter(|s| s.is_err()).count();
        let codes = DMatrix::from_fn(batch.len(), dict.n(), |i, j| match &solutions[i] {
            Ok(s) => s.code[j],
            Err(_) => f64::NAN,
        });
        out.write("codes.splb", &codes_to_splb(&codes)?)?;
        self.matrix(out, "codes", &codes, "sample", "z")?;
        let rows: Vec<serde_json::Value> = solutions
            .iter()
            .map(|s| match s {
                Ok(s) => serde_json::json!({
                    "iterations": s.iterations_used,
                    "objective": s.final_objective(),
                    "support": s.support(),
                    "converged": s.converged,
                }),
                Err(e) => serde_json::json!({ "error": e.to_string() }),
            })
            .collect();
        self.table(out, "solutions", |b| write_solutions_csv(b, &solutions), || serde_json::Value::Array(rows))?;
        let ok: Vec<&SparseSolution> = solutions.iter().filter_map(|s| s.as_ref().ok()).collect();
        let mean_objective =
            if ok.is_empty() { None } else { Some(ok.iter().map(|s| s.final_objective()).sum::<f64>() / ok.len() as f64) };
        Ok(out.write_json(
            "summary.json",
            &serde_json::json!({
                "method": method,
                "samples": batch.len(),
                "failed": failed,
                "converged": ok.iter().filter(|s| s.converged).count(),
                "mean_objective": mean_objective,
            }),
        )?)
    }

    fn learn_dict(&self, out: &mut OutputDir) -> CliResult<()> {
        let data = self.gen(out)?;
        let every = self.opts.snapshot_every.unwrap_or(0);
        let mut snapshots: Vec<(usize, Vec<u8>)> = Vec::new();
        let mut snap_err = None;
        let (learned, trace) =
            learn_with(&data.batch, data.dict.n(), &self.cfg.dict_learn, self.seed("dict-learn"), &mut |round, d| {
                if every > 0 && round % every == 0 {
                    match d.to_splb() {
                        Ok(b) => snapshots.push((round, b)),
                        Err(e) => snap_err = Some(e),
                    }
                }
            })?;
        if let Some(e) = snap_err {
            return Err(e.into());
        }
        for (round, bytes) in &snapshots {
            out.write(&format!("snapshots/round-{round:05}.splb"), bytes)?;
        }
        out.write("learned_dictionary.splb", &learned.to_splb()?)?;
        self.matrix(out, "learned_dictionary", learned.atoms(), "row", "atom")?;
        self.table(out, "trace", |b| trace.write_csv(b), || serde_json::to_value(&trace).expect("serializable"))?;
        Ok(out.write_json("recovery.json", &match_dictionaries(&data.dict, &learned)?)?)
    }

    fn train_sae(&self, out: &mut OutputDir) -> CliResult<()> {
        let data = self.gen(out)?;
        let sae_cfg = sparselift::sae::SaeTrainConfig { seed: self.seed("sae"), ..self.cfg.sae };
        let (params, trace) = train_sae(&data.batch, data.dict.n(), &sae_cfg)?;
        out.write("sae.splb", &params.to_splb()?)?;
        self.table(out, "trace", |b| trace.write_csv(b), || serde_json::to_value(&trace).expect("serializable"))?;
        let gap =
            amortization_gap(&params, &params.dec_dict, &data.batch, sae_cfg.lambda, &self.cfg.solver.solver_config())?;
        out.write_json("amortization_gap.json", &gap)?;
        Ok(out.write_json("recovery.json", &match_dictionaries(&data.dict, &params.dec_dict)?)?)
    }

    fn identcheck(&self, out: &mut OutputDir) -> CliResult<()> {
        let id = &self.cfg.ident;
        let seeds: Vec<u64> = id.seeds.iter().map(|i| self.seed(&format!("ident-{i}"))).collect();
        let trials = run_identifiability(&id.dgp, &id.classifier, &seeds, id.n_test)?;
        self.table(out, "trials", |b| write_trials_csv(&trials, b), || serde_json::to_value(&trials).expect("serializable"))?;
        let improved = trials.iter().filter(|t| t.improved()).count();
        Ok(out.write_json(
            "summary.json",
            &serde_json::json!({
                "trials": trials.len(),
                "improved": improved,
                "generator": id.dgp.generator,
            }),
        )?)
    }

    fn metrics(&self, out: &mut OutputDir, est: &DMatrix<f64>, truth: &DMatrix<f64>, code_report: &str) -> CliResult<()> {
        out.write_json(code_report, &match_codes(truth, est)?)?;
        out.write_json("interpretability.json", &interpretability_proxy(est, truth)?)?;
        let ev = &self.cfg.eval;
        Ok(out.write_json("intrusion.json", &intrusion_task(est, truth, ev.top_q, ev.intrusion_trials, self.seed("intrusion"))?)?)
    }

    fn eval(&self, out: &mut OutputDir) -> CliResult<()> {
        let data = self.data()?;
        let est = self.infer(&data.dict, &data.batch)?;
        out.write("estimated_codes.splb", &codes_to_splb(&est)?)?;
        out.write_json("superposition.json", &superposition_check(&data.dict))?;
        self.metrics(out, &est, &data.truth(), "recovery.json")
    }

    fn phase_sweep(&self, out: &mut OutputDir) -> CliResult<()> {
        let spec = sparselift::phase::SweepSpec { seed: self.seed("sweep"), ..self.cfg.sweep.clone() };
        let grid = run_phase_sweep(&spec)?;
        let fit = fit_boundary(&grid);
        self.table(out, "grid", |b| grid.write_csv(b), || serde_json::to_value(&grid).expect("serializable"))?;
        out.write_json(
            "boundary.json",
            &serde_json::json!({
                "fit": fit,
                "m_monotonicity_violations": m_monotonicity_violations(&grid),
                "k_monotonicity_violations": k_monotonicity_violations(&grid),
            }),
        )?;
        out.write("heatmap.svg", render_heatmap(&grid, &fit).as_bytes())?;
        Ok(())
    }

    fn pipeline(&self, out: &mut OutputDir) -> CliResult<()> {
        let data = self.gen(out)?;
        let (learned, trace) =
            learn_with(&data.batch, data.dict.n(), &self.cfg.dict_learn, self.seed("dict-learn"), &mut |_, _| {})?;
        out.write("learned_dictionary.splb", &learned.to_splb()?)?;
        self.table(out, "trace", |b| trace.write_csv(b), || serde_json::to_value(&trace).expect("serializable"))?;
        out.write_json("recovery.json", &match_dictionaries(&data.dict, &learned)?)?;
        let est = self.infer(&learned, &data.batch)?;
        out.write("estimated_codes.splb", &codes_to_splb(&est)?)?;
        self.metrics(out, &est, &data.truth(), "code_recovery.json")
    }
}
