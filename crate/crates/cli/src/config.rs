//! Run configuration: a single JSON file, fully echoed into the summary.
//!
//! No environment variables are read; the seed is fixed for every run so
//! reruns are reproducible.

use std::path::Path;

use serde::{Deserialize, Serialize};

use safeopt_core::reform::ReformConfig;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Grid,
    Reform,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Grid => "grid",
            Algorithm::Reform => "reform",
        }
    }
}

/// Gaussian-process hyperparameters. Lengthscales are shared across the
/// objective and constraint models; signal and noise variances are per
/// output (index 0 objective, 1.. constraints).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpSection {
    pub lengthscales: Vec<f64>,
    pub signal_variances: Vec<f64>,
    pub noise_variances: Vec<f64>,
}

/// Grid-mode settings: lattice resolution and stopping tolerances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub per_axis: Vec<usize>,
    pub max_iterations: usize,
    pub eps_x: f64,
    pub eps_f: f64,
}

/// Cartesian sweep over pattern-search stopping settings; each
/// (mesh tolerance, initial mesh) pair becomes one independent cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub mesh_tolerances: Vec<f64>,
    pub initial_meshes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Benchmark id: `quad` or `pid`.
    pub benchmark: String,
    pub algorithm: Algorithm,
    pub gp: GpSection,
    /// Confidence-band scaling (the bounds are mean +/- beta * std).
    pub beta: f64,
    /// Safety threshold every constraint lower bound must exceed.
    pub j_min: f64,
    #[serde(default)]
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub reform: Option<ReformConfig>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    /// Standard deviation of the Gaussian observation noise (0 = noise-free).
    #[serde(default)]
    pub observation_noise_std: f64,
    pub seed: u64,
    /// Output directory; overridable with `--out`.
    #[serde(default)]
    pub out_dir: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| {
            CliError::Config(format!(
                "{}:{}:{}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })?;
        Ok(cfg)
    }

    /// Number of oracle outputs (objective + constraints) of the benchmark.
    pub fn num_outputs(&self) -> Result<usize, CliError> {
        match self.benchmark.as_str() {
            "quad" => Ok(3),
            "pid" => Ok(2),
            other => Err(CliError::Config(format!(
                "field `benchmark`: unknown id {other:?} (expected \"quad\" or \"pid\")"
            ))),
        }
    }

    pub fn dim(&self) -> Result<usize, CliError> {
        match self.benchmark.as_str() {
            "quad" => Ok(2),
            "pid" => Ok(3),
            other => Err(CliError::Config(format!(
                "field `benchmark`: unknown id {other:?} (expected \"quad\" or \"pid\")"
            ))),
        }
    }

    /// Semantic validation beyond what deserialization enforces. `need`
    /// states which algorithm sections the subcommand requires.
    pub fn validate(&self, need: SectionNeed) -> Result<(), CliError> {
        let dim = self.dim()?;
        let outputs = self.num_outputs()?;
        if self.gp.lengthscales.len() != dim {
            return Err(CliError::Config(format!(
                "field `gp.lengthscales`: expected {dim} entries, got {}",
                self.gp.lengthscales.len()
            )));
        }
        for (name, v) in [
            ("gp.lengthscales", &self.gp.lengthscales),
            ("gp.signal_variances", &self.gp.signal_variances),
            ("gp.noise_variances", &self.gp.noise_variances),
        ] {
            if v.iter().any(|x| !(*x > 0.0)) {
                return Err(CliError::Config(format!(
                    "field `{name}`: all entries must be positive"
                )));
            }
        }
        for (name, v) in [
            ("gp.signal_variances", &self.gp.signal_variances),
            ("gp.noise_variances", &self.gp.noise_variances),
        ] {
            if v.len() != outputs {
                return Err(CliError::Config(format!(
                    "field `{name}`: expected {outputs} entries, got {}",
                    v.len()
                )));
            }
        }
        if !(self.beta > 0.0) {
            return Err(CliError::Config("field `beta`: must be positive".into()));
        }
        if !self.j_min.is_finite() {
            return Err(CliError::Config("field `j_min`: must be finite".into()));
        }
        if !(self.observation_noise_std >= 0.0) {
            return Err(CliError::Config(
                "field `observation_noise_std`: must be nonnegative".into(),
            ));
        }
        if need.grid {
            let g = self.grid.as_ref().ok_or_else(|| {
                CliError::Config("field `grid`: required for the grid algorithm".into())
            })?;
            if g.per_axis.len() != dim {
                return Err(CliError::Config(format!(
                    "field `grid.per_axis`: expected {dim} entries, got {}",
                    g.per_axis.len()
                )));
            }
            if g.per_axis.iter().any(|n| *n < 2) {
                return Err(CliError::Config(
                    "field `grid.per_axis`: every axis needs at least 2 points".into(),
                ));
            }
            if g.max_iterations == 0 {
                return Err(CliError::Config(
                    "field `grid.max_iterations`: must be >= 1".into(),
                ));
            }
            if !(g.eps_x > 0.0) || !(g.eps_f > 0.0) {
                return Err(CliError::Config(
                    "field `grid.eps_x`/`grid.eps_f`: must be positive".into(),
                ));
            }
        }
        if need.reform {
            let r = self.reform.as_ref().ok_or_else(|| {
                CliError::Config("field `reform`: required for the reform algorithm".into())
            })?;
            validate_reform(r)?;
        }
        if need.sweep {
            let s = self.sweep.as_ref().ok_or_else(|| {
                CliError::Config("field `sweep`: required for the sweep subcommand".into())
            })?;
            if s.mesh_tolerances.is_empty() || s.initial_meshes.is_empty() {
                return Err(CliError::Config(
                    "field `sweep`: mesh_tolerances and initial_meshes must be non-empty".into(),
                ));
            }
            if s.mesh_tolerances.iter().any(|t| !(*t > 0.0))
                || s.initial_meshes.iter().any(|d| !(*d > 0.0))
            {
                return Err(CliError::Config(
                    "field `sweep`: all tolerances and mesh sizes must be positive".into(),
                ));
            }
            for d in &s.initial_meshes {
                if s.mesh_tolerances.iter().any(|t| t >= d) {
                    return Err(CliError::Config(
                        "field `sweep`: every mesh tolerance must be below every initial mesh"
                            .into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Which config sections a subcommand requires.
#[derive(Debug, Clone, Copy, Default)]
pub struct SectionNeed {
    pub grid: bool,
    pub reform: bool,
    pub sweep: bool,
}

impl SectionNeed {
    pub fn for_algorithm(alg: Algorithm) -> Self {
        match alg {
            Algorithm::Grid => Self { grid: true, ..Self::default() },
            Algorithm::Reform => Self { reform: true, ..Self::default() },
        }
    }

    pub fn both() -> Self {
        Self { grid: true, reform: true, sweep: false }
    }

    pub fn sweep() -> Self {
        Self { grid: false, reform: true, sweep: true }
    }
}

/// Deserialized `ReformConfig` values bypass the constructor checks, so
/// re-validate everything a hand-written config could get wrong.
fn validate_reform(r: &ReformConfig) -> Result<(), CliError> {
    r.validate()
        .map_err(|e| CliError::Config(format!("field `reform`: {e}")))?;
    let ps = &r.subproblem;
    if !(ps.initial_mesh > 0.0) {
        return Err(CliError::Config(
            "field `reform.subproblem.initial_mesh`: must be positive".into(),
        ));
    }
    if !(ps.mesh_tolerance > 0.0) || ps.mesh_tolerance >= ps.initial_mesh {
        return Err(CliError::Config(
            "field `reform.subproblem.mesh_tolerance`: must satisfy 0 < tolerance < initial_mesh"
                .into(),
        ));
    }
    if ps.max_evaluations == 0 {
        return Err(CliError::Config(
            "field `reform.subproblem.max_evaluations`: must be >= 1".into(),
        ));
    }
    if ps.multistart_count == 0 {
        return Err(CliError::Config(
            "field `reform.subproblem.multistart_count`: must be >= 1".into(),
        ));
    }
    Ok(())
}
