// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sparselift_cli::{load_config, resolve_out, run, CliResult, ExperimentKind, FlagOverrides, OutputFormat, RunOptions};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// Synthetic sparse-coding experiments.
#[derive(Debug, Parser)]
#[command(name = "sparselift", version)]
struct Cli {
    /// TOML experiment description.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; every module seed is derived from it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(0..=i64::MAX as u64))]
    seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Format of tabular outputs.
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a dictionary, sparse codes and observations.
    Gen,
    /// Infer sparse codes for each observation.
    Solve {
        /// Dictionary SPLB file; requires --observations.
        #[arg(long)]
        dictionary: Option<PathBuf>,
        /// Observation SPLB file; requires --dictionary.
        #[arg(long)]
        observations: Option<PathBuf>,
    },
    /// Alternating dictionary learning on generated data.
    LearnDict {
        /// Save the dictionary every this many rounds.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        snapshot_every: Option<u64>,
    },
    /// Train a sparse autoencoder and measure its amortization gap.
    TrainSae,
    /// Train classifiers on clustered data and score encoder linearity.
    Identcheck {
        /// Number of seeds (0..N).
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        seeds: Option<u64>,
        /// linear, pointwise-cubic-then-rotation or two-layer-invertible.
        #[arg(long)]
        generator: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Solve generated data and score the recovered codes.
    Eval,
    /// Monte-Carlo recovery sweep over (K, M) with a boundary fit and heatmap.
    PhaseSweep,
    /// Generate, learn a dictionary, infer codes and score everything.
    Pipeline,
    /// Run whatever `kind` the config file names.
    Run,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    let mut flags = FlagOverrides { master_seed: cli.seed, ..FlagOverrides::default() };
    let mut opts = RunOptions {
        format: match cli.format {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        },
        jobs: cli.jobs.map(|j| j as usize),
        ..RunOptions::default()
    };
    flags.kind = match cli.command {
        Command::Gen => Some(ExperimentKind::Gen),
        Command::Solve { dictionary, observations } => {
            opts.dictionary = dictionary;
            opts.observations = observations;
            Some(ExperimentKind::Solve)
        }
        Command::LearnDict { snapshot_every } => {
            opts.snapshot_every = snapshot_every.map(|r| r as usize);
            Some(ExperimentKind::LearnDict)
        }
        Command::TrainSae => Some(ExperimentKind::TrainSae),
        Command::Identcheck { seeds, generator, epochs } => {
            if let Some(n) = seeds {
                let list: Vec<String> = (0..n).map(|i| i.to_string()).collect();
                flags.extra.push(("ident.seeds".into(), format!("[{}]", list.join(", "))));
            }
            if let Some(g) = generator {
                flags.extra.push(("ident.dgp.generator".into(), format!("{:?}", g)));
            }
            if let Some(e) = epochs {
                flags.extra.push(("ident.classifier.epochs".into(), e.to_string()));
            }
            Some(ExperimentKind::Identcheck)
        }
        Command::Eval => Some(ExperimentKind::Eval),
        Command::PhaseSweep => Some(ExperimentKind::PhaseSweep),
        Command::Pipeline => Some(ExperimentKind::Pipeline),
        Command::Run => None,
    };
    let mut cfg = load_config(cli.config.as_deref(), std::env::vars(), &flags)?;
    opts.out = resolve_out(cli.out, &cfg);
    // the written config should not depend on where it was written
    cfg.output_dir = None;
    let manifest = run(&cfg, &opts)?;
    println!("{}: wrote {} files to {}", manifest.command, manifest.files.len() + 1, opts.out.display());
    Ok(())
}
