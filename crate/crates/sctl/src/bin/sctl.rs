//! Command-line front end for the spectral CT pipeline.

use clap::{Parser, Subcommand};
use sctl::commands::{self, Method, Overrides};
use sctl::config::{exit_code, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "sctl", about = "Spectral CT simulation and reconstruction")]
struct Cli {
    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the view count (sinograms are subsampled to match).
    #[arg(long, global = true)]
    views: Option<usize>,

    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize the phantom and simulate the spectral scan.
    Simulate {
        /// Skip Poisson noise; the sinogram is the exact forward projection.
        #[arg(long)]
        noiseless: bool,
    },
    /// Train the tensor dictionary from a filtered-backprojection prior.
    TrainDict,
    /// Reconstruct the sinogram with one method.
    Reconstruct {
        #[arg(long)]
        method: String,
    },
    /// Score all reconstructions in the output directory against the truth.
    Evaluate,
    /// Decompose a reconstruction into basis-material fraction maps.
    Decompose {
        /// Method whose reconstruction to decompose, or "truth".
        #[arg(long, default_value = "l0tdl")]
        method: String,
    },
}

fn run(cli: &Cli) -> sctl::Result<()> {
    let config_path = cli.config.as_ref().ok_or_else(|| {
        sctl::SctlError::Config("--config is required".into())
    })?;
    let cfg = RunConfig::load(config_path)?;
    let ov = Overrides {
        views: cli.views,
        seed: cli.seed,
        out: cli.out.clone(),
    };
    match &cli.command {
        Command::Simulate { noiseless } => commands::cmd_simulate(&cfg, &ov, *noiseless),
        Command::TrainDict => commands::cmd_train_dict(&cfg, &ov),
        Command::Reconstruct { method } => {
            commands::cmd_reconstruct(&cfg, &ov, Method::parse(method)?)
        }
        Command::Evaluate => commands::cmd_evaluate(&cfg, &ov),
        Command::Decompose { method } => commands::cmd_decompose(&cfg, &ov, method),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
