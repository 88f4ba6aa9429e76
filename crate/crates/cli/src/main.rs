mod commands;
mod config;
mod lock;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use omnigait::dataset::Modality;
use omnigait::evalproto::ProtocolSpec;

use crate::config::UsageError;

/// Synthetic multi-modal gait data, OmniGait training and retrieval evaluation.
#[derive(Debug, Parser)]
#[command(name = "omnigait", version)]
struct Cli {
    /// TOML job configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.batch.p=4`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Seed for every random choice of the job.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving every artifact of the job.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct DataArg {
    /// Dataset root.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[command(flatten)]
    data: DataArg,
    /// Trained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic dataset into the output directory.
    SynthGen,
    /// Re-project stored LiDAR and radar clouds into depth maps.
    Preprocess(DataArg),
    /// Train on the training split of a dataset.
    Train {
        #[command(flatten)]
        data: DataArg,
        /// Continue from this training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        /// single:<m>, cross:<probe>-><gallery> or multi:<a>+<b>; repeatable.
        #[arg(long)]
        protocol: Vec<ProtocolSpec>,
    },
    /// Write test-split embeddings for later evaluation.
    ExportEmbeddings {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        protocol: Vec<ProtocolSpec>,
    },
    /// Probe-by-gallery modality matrix of single- and cross-modal results.
    ReportMatrix {
        #[command(flatten)]
        model: ModelArgs,
        /// Comma-separated modality tags.
        #[arg(long, value_delimiter = ',')]
        modalities: Vec<Modality>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_secs()
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
