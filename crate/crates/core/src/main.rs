use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qfedsim::config::{ExperimentKind, RunConfig};
use qfedsim::experiments::{run, RunOptions};

#[derive(Parser)]
#[command(
    name = "qfedsim",
    version,
    about = "Quantized federated learning energy toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize expected energy over transmit power and packet error rate.
    Optimize(CommonArgs),
    /// Train a federation for each configured drop probability.
    Train(CommonArgs),
    /// Analytic energy and time across bit-widths.
    Sweep(CommonArgs),
    /// Convergence constants and the gap trajectory.
    Bounds(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config, or a JSON summary from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Use only the first N training samples.
    #[arg(long)]
    subset: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Optimize(a) => (ExperimentKind::Optimize, a),
        Command::Train(a) => (ExperimentKind::Train, a),
        Command::Sweep(a) => (ExperimentKind::Sweep, a),
        Command::Bounds(a) => (ExperimentKind::Bounds, a),
    };
    let opts = RunOptions {
        seed: args.seed,
        subset: args.subset,
    };
    let result = RunConfig::load(&args.config).and_then(|cfg| run(cfg, kind, opts, &args.out));
    match result {
        Ok(artifacts) => {
            for line in &artifacts.report {
                println!("{line}");
            }
            for file in &artifacts.files {
                println!("wrote {}", file.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
