use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser};
use qleak_cli::{run, Experiment, Overrides};

/// Pulse-level leakage benchmarking experiments on a simulated transmon qutrit.
#[derive(Debug, Parser)]
#[command(name = "qleak", version)]
struct Cli {
    #[arg(value_enum)]
    experiment: Experiment,
    #[command(flatten)]
    opts: RunArgs,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON config, or a manifest from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.opts.seed,
        out: cli.opts.out,
    };
    match run(cli.experiment, &cli.opts.config, &overrides) {
        Ok(summary) => {
            for p in &summary.outputs {
                println!("wrote {}", p.display());
            }
            println!("wrote {}", summary.manifest.display());
            for f in &summary.failures {
                eprintln!("failed: {}: {}", f.point, f.error);
            }
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
