use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use safeopt_cli::{run_command, Command, Overrides};

/// Safe Bayesian optimization benchmark driver.
#[derive(Parser)]
#[command(name = "safeopt", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Path to the JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed override for the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for independent sweep cells.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Non-convex quadratic benchmark.
    Quad,
    /// Cascade-PID tuning benchmark on the surrogate plant.
    Pid,
    /// Grid and reformulated algorithms side by side on one benchmark.
    Compare,
    /// Cartesian sweep over pattern-search stopping settings.
    Sweep,
    /// Gaussian-process self-test against independent recomputation.
    GpCheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = match cli.command {
        Cmd::Quad => Command::Quad,
        Cmd::Pid => Command::Pid,
        Cmd::Compare => Command::Compare,
        Cmd::Sweep => Command::Sweep,
        Cmd::GpCheck => Command::GpCheck,
    };
    let overrides = Overrides { out: cli.out, seed: cli.seed, jobs: cli.jobs };
    match run_command(cmd, cli.config.as_deref(), &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
