//! `sgla`: train, evaluate, verify and visualize SGLANet models.

mod commands;
mod failure;
mod visualize;

use std::path::PathBuf;
use std::process;

use clap::{Args, Parser, Subcommand};
use sglanet::config::Preset;
use sglanet::training::Split;
use sglanet::verify::Scope;

use crate::failure::{ExitCode, Failure};

#[derive(Debug, Parser)]
#[command(name = "sgla", version, about = "Spatial-channel attention food recognition network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where the model and training configuration come from.
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// TOML file layered over the preset
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Base preset: desk or paper
    #[arg(long, default_value = "desk")]
    pub preset: Preset,
    /// Overrides the configured seed
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Overrides the global loss weight
    #[arg(long, value_name = "F")]
    pub gamma1: Option<f64>,
    /// Overrides the local loss weight
    #[arg(long, value_name = "F")]
    pub gamma2: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on an image-folder dataset
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset root with one directory per class
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Output directory for metrics and checkpoints
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on one split; prints {top1, top5, n}
    Eval {
        checkpoint: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// train, val or test
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Run the 64-bit gradient-check suites
    Gradcheck {
        /// all, tensor, sca, st or network
        #[arg(long, default_value = "all")]
        scope: Scope,
    },
    /// Render attention heatmaps and region boxes for one image
    Visualize {
        checkpoint: PathBuf,
        image: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// List the tensors stored in a checkpoint
    InspectCheckpoint { checkpoint: PathBuf },
}

/// Writes one output record to stdout; a closed pipe is ignored so files still get written.
pub fn emit(line: impl std::fmt::Display) {
    use std::io::Write;
    if let Err(e) = writeln!(std::io::stdout().lock(), "{line}") {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            return;
        }
        eprintln!("error: cannot write to stdout: {e}");
        process::exit(ExitCode::Data as i32);
    }
}

fn init_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("SGLA_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::new(ExitCode::Config, format!("SGLA_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::new(ExitCode::Config, format!("cannot size the worker pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads()?;
    match cli.command {
        Command::Train { config, data, out } => commands::train(&config, &data, &out),
        Command::Eval { checkpoint, config, data, split } => commands::eval(&checkpoint, &config, &data, split),
        Command::Gradcheck { scope } => commands::gradcheck(scope),
        Command::Visualize { checkpoint, image, config, out } => visualize::run(&checkpoint, &image, &config, &out),
        Command::InspectCheckpoint { checkpoint } => commands::inspect(&checkpoint),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(failure) = run(cli) {
        eprintln!("error: {failure}");
        process::exit(failure.code as i32);
    }
}
