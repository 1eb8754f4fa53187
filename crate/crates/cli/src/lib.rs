//! Command-line pipeline: synthesize or preprocess data, pretrain an encoder,
//! evaluate it and tabulate results across seeds.

pub mod commands;
pub mod compare;
pub mod config;
mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use emargin_core::eval::AssignmentSource;
use emargin_core::train::LossKind;

pub use config::{RunConfig, Source};
pub use error::{CliError, ExitKind};

#[derive(Debug, Parser)]
#[command(name = "emargin", version, about = "Contrastive time-series pretraining and evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; omitted fields take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the training seed from the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Root directory for every artifact.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate regime-switching sequences and write train/test batches.
    Synth,
    /// Turn a CSV recording into STFT sequence batches.
    Preprocess {
        /// CSV file, overriding the configured source.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train the encoder and write a checkpoint plus loss trace.
    Pretrain {
        /// Directory holding train.emsb; defaults to <out>/data.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        loss: Option<LossKind>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Score an encoder with clustering metrics and a linear probe.
    Eval(EvalArgs),
    /// Tabulate reports as mean±std over seeds.
    Compare {
        /// Report files, or directories whose *.json files are all read.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long, conflicts_with = "random_init", required_unless_present = "random_init")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate a freshly initialised encoder.
    #[arg(long)]
    pub random_init: bool,
    /// Directory holding train.emsb and test.emsb; defaults to <out>/data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub assignment: Option<AssignmentSource>,
    /// Also write per-step test embeddings as CSV.
    #[arg(long)]
    pub export_embeddings: bool,
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = match &cli.global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let g = &cli.global;
    match &cli.command {
        Command::Synth => commands::synth(&cfg, g).map(|_| ()),
        Command::Preprocess { csv } => commands::preprocess(&cfg, g, csv.as_deref()).map(|_| ()),
        Command::Pretrain { data, loss, iterations } => {
            commands::pretrain(&cfg, g, data.as_deref(), *loss, *iterations).map(|_| ())
        }
        Command::Eval(args) => commands::eval(&cfg, g, args).map(|_| ()),
        Command::Compare { reports } => {
            let table = commands::compare(g, reports)?;
            print!("{table}");
            Ok(())
        }
    }
}

/// Reads `EMARGIN_THREADS` (default 1) and caps both the kernel and the
/// rayon pool at that many threads.
pub fn configure_threads() -> Result<usize, CliError> {
    let n = match std::env::var("EMARGIN_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::usage(format!("EMARGIN_THREADS={v:?} is not a positive integer")))?,
        Err(_) => 1,
    };
    emargin_core::autodiff::set_kernel_threads(n);
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    Ok(n)
}
