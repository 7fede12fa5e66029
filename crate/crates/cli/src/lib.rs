//! Library backing the `safeopt` command-line driver.
//!
//! Everything the binary does is reachable from here so integration tests
//! can drive subcommands in-process.

pub mod config;
pub mod exec;

use std::fmt;
use std::path::{Path, PathBuf};

pub use config::{Algorithm, RunConfig, SectionNeed};
pub use exec::{SummaryRow, sweep_rows};

/// Top-level failure classes mapped to process exit codes: config errors
/// exit 2, runtime errors exit 3.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: usize,
}

/// Subcommands of the driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Quad,
    Pid,
    Compare,
    Sweep,
    GpCheck,
}

impl Command {
    fn benchmark_id(self) -> Option<&'static str> {
        match self {
            Command::Quad => Some("quad"),
            Command::Pid => Some("pid"),
            _ => None,
        }
    }
}

fn resolve_out_dir(cfg_out: Option<&str>, ov: &Overrides) -> Result<PathBuf, CliError> {
    let dir = ov
        .out
        .clone()
        .or_else(|| cfg_out.map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

/// Run one subcommand end to end. All validation happens before any output
/// file is created.
pub fn run_command(
    cmd: Command,
    config_path: Option<&Path>,
    overrides: &Overrides,
) -> Result<(), CliError> {
    if cmd == Command::GpCheck {
        // gp-check needs no benchmark config; a config file, if given, only
        // contributes its seed and output directory.
        let (seed, cfg_out) = match config_path {
            Some(p) => {
                let cfg = RunConfig::load(p)?;
                (cfg.seed, cfg.out_dir)
            }
            None => (0, None),
        };
        let seed = overrides.seed.unwrap_or(seed);
        let out = resolve_out_dir(cfg_out.as_deref(), overrides)?;
        return exec::run_gp_check(seed, &out);
    }

    let path = config_path
        .ok_or_else(|| CliError::Config("missing required `--config <path>`".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(bench) = cmd.benchmark_id() {
        // The subcommand names the benchmark; the config must agree.
        if cfg.benchmark != bench {
            return Err(CliError::Config(format!(
                "field `benchmark`: config says {:?} but the `{bench}` subcommand was invoked",
                cfg.benchmark
            )));
        }
    }
    let need = match cmd {
        Command::Quad | Command::Pid => SectionNeed::for_algorithm(cfg.algorithm),
        Command::Compare => SectionNeed::both(),
        Command::Sweep => SectionNeed::sweep(),
        Command::GpCheck => unreachable!(),
    };
    cfg.validate(need)?;
    let out = resolve_out_dir(cfg.out_dir.as_deref(), overrides)?;
    match cmd {
        Command::Quad | Command::Pid => exec::run_benchmark(&cfg, &out),
        Command::Compare => exec::run_compare(&cfg, &out),
        Command::Sweep => exec::run_sweep(&cfg, &out, overrides.jobs.max(1)),
        Command::GpCheck => unreachable!(),
    }
}
