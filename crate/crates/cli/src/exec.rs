//! Subcommand execution: benchmark runs, compare, sweep cells, GP self-test.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use safeopt_core::bench::{pid, quad};
use safeopt_core::gp::{ConfidenceBand, GpData, GpPosterior, KernelSpec};
use safeopt_core::grid::{Grid, GridRunConfig};
use safeopt_core::reform::{self, ModelConfig, ReformConfig};
use safeopt_core::space::BoxBounds;
use safeopt_core::trace::RunTrace;
use safeopt_core::{grid, CoreError, OracleSuite, Point};

use crate::config::{Algorithm, RunConfig, SweepSection};
use crate::CliError;

/// One row of the run summary table (Tables 2/3 shape): config echo,
/// solution, objective, iteration count, and timing means.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub benchmark: String,
    pub algorithm: String,
    pub eps_x: f64,
    pub eps_f: f64,
    /// Pattern-search mesh tolerance (reform rows only).
    pub mesh_tolerance: Option<f64>,
    /// Pattern-search initial mesh size delta^0 (reform rows only).
    pub initial_mesh: Option<f64>,
    /// Total lattice point count N (grid rows only).
    pub grid_points: Option<usize>,
    pub solution: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub total_millis: f64,
    pub mean_p1_millis: f64,
    pub mean_p2_millis: f64,
}

impl SummaryRow {
    fn check(self) -> Result<Self, CliError> {
        if self.iterations < 1 {
            return Err(CliError::Runtime("summary row with zero iterations".into()));
        }
        if self.total_millis < 0.0 || self.mean_p1_millis < 0.0 || self.mean_p2_millis < 0.0 {
            return Err(CliError::Runtime("summary row with negative timing".into()));
        }
        Ok(self)
    }
}

/// Render summary rows as CSV. All rows must share one solution dimension.
pub fn rows_to_csv(rows: &[SummaryRow]) -> String {
    let dim = rows.first().map_or(0, |r| r.solution.len());
    let mut cols = vec![
        "benchmark".to_string(),
        "algorithm".to_string(),
        "eps_x".to_string(),
        "eps_f".to_string(),
        "mesh_tol".to_string(),
        "initial_mesh".to_string(),
        "n_grid".to_string(),
    ];
    cols.extend((0..dim).map(|i| format!("x{i}")));
    cols.extend(
        ["objective", "iterations", "total_ms", "mean_p1_ms", "mean_p2_ms"]
            .iter()
            .map(|s| s.to_string()),
    );
    let mut out = cols.join(",");
    out.push('\n');
    for r in rows {
        let mut c: Vec<String> = vec![
            r.benchmark.clone(),
            r.algorithm.clone(),
            format!("{}", r.eps_x),
            format!("{}", r.eps_f),
            r.mesh_tolerance.map_or(String::new(), |v| format!("{v}")),
            r.initial_mesh.map_or(String::new(), |v| format!("{v}")),
            r.grid_points.map_or(String::new(), |v| format!("{v}")),
        ];
        c.extend(r.solution.iter().map(|v| format!("{v}")));
        c.push(format!("{}", r.objective));
        c.push(format!("{}", r.iterations));
        c.push(format!("{}", r.total_millis));
        c.push(format!("{}", r.mean_p1_millis));
        c.push(format!("{}", r.mean_p2_millis));
        let _ = writeln!(out, "{}", c.join(","));
    }
    out
}

/// Document written to `summary.json`: full config echo plus result rows.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryDoc {
    pub config: RunConfig,
    pub rows: Vec<SummaryRow>,
    /// Number of recommended iterates violating the true (noise-free)
    /// constraints; present for benchmark runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_violations: Option<usize>,
}

/// A benchmark bound to its oracle suite and metadata.
struct Bench {
    suite: Box<dyn OracleSuite>,
    bounds: BoxBounds,
    initial_points: Vec<Point>,
    name: String,
}

fn make_bench(cfg: &RunConfig) -> Result<Bench, CliError> {
    match cfg.benchmark.as_str() {
        "quad" => Ok(Bench {
            suite: Box::new(quad::QuadraticProblem::new(cfg.observation_noise_std, cfg.seed)),
            bounds: quad::bounds(),
            initial_points: quad::initial_safe_set(),
            name: "quad".into(),
        }),
        "pid" => Ok(Bench {
            suite: Box::new(pid::PidProblem::new(
                pid::PlantModel::default_surrogate(),
                pid::TuningSpec::default(),
                cfg.observation_noise_std,
                cfg.seed,
            )),
            bounds: pid::search_box(),
            initial_points: pid::initial_safe_set(),
            name: "pid".into(),
        }),
        other => Err(CliError::Config(format!(
            "field `benchmark`: unknown id {other:?}"
        ))),
    }
}

fn model_config(cfg: &RunConfig) -> Result<ModelConfig, CliError> {
    let outputs = cfg.num_outputs()?;
    let mut kernels = Vec::with_capacity(outputs);
    for j in 0..outputs {
        kernels.push(
            KernelSpec::squared_exponential(cfg.gp.lengthscales.clone(), cfg.gp.signal_variances[j])
                .map_err(|e| CliError::Config(format!("field `gp`: {e}")))?,
        );
    }
    Ok(ModelConfig {
        kernels,
        noise_variances: cfg.gp.noise_variances.clone(),
        band: ConfidenceBand::new(cfg.beta)
            .map_err(|e| CliError::Config(format!("field `beta`: {e}")))?,
        j_min: cfg.j_min,
        width_indices: (0..outputs).collect(),
    })
}

fn runtime(e: CoreError) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Result of one algorithm run before serialization.
pub struct RunResult {
    pub row: SummaryRow,
    pub trace: RunTrace,
    pub best: Point,
    pub dim: usize,
    pub num_outputs: usize,
}

/// Run the configured algorithm once on the configured benchmark.
pub fn run_single(cfg: &RunConfig, algorithm: Algorithm) -> Result<RunResult, CliError> {
    let mut bench = make_bench(cfg)?;
    let model_cfg = model_config(cfg)?;
    let initial: Vec<(Point, Vec<f64>)> = bench
        .initial_points
        .iter()
        .map(|p| (p.clone(), bench.suite.evaluate(p)))
        .collect();
    let started = Instant::now();
    let (best, best_value, trace, row) = match algorithm {
        Algorithm::Reform => {
            let r = cfg
                .reform
                .as_ref()
                .ok_or_else(|| CliError::Config("field `reform`: required".into()))?;
            let (best, v, trace) =
                reform::run(bench.suite.as_mut(), &initial, &model_cfg, &bench.bounds, r)
                    .map_err(runtime)?;
            let row = SummaryRow {
                benchmark: bench.name.clone(),
                algorithm: "reform".into(),
                eps_x: r.eps_x,
                eps_f: r.eps_f,
                mesh_tolerance: Some(r.subproblem.mesh_tolerance),
                initial_mesh: Some(r.subproblem.initial_mesh),
                grid_points: None,
                solution: best.clone(),
                objective: v,
                iterations: trace.len().max(1),
                total_millis: started.elapsed().as_secs_f64() * 1e3,
                mean_p1_millis: trace.mean_p1_millis(),
                mean_p2_millis: trace.mean_p2_millis(),
            };
            (best, v, trace, row)
        }
        Algorithm::Grid => {
            let g = cfg
                .grid
                .as_ref()
                .ok_or_else(|| CliError::Config("field `grid`: required".into()))?;
            let lattice = Grid::lattice(&bench.bounds, &g.per_axis).map_err(runtime)?;
            let run_cfg = GridRunConfig {
                max_iterations: g.max_iterations,
                eps_x: g.eps_x,
                eps_f: g.eps_f,
            };
            let n = lattice.len();
            let (best, v, trace) =
                grid::run(bench.suite.as_mut(), &initial, &model_cfg, &lattice, &run_cfg)
                    .map_err(runtime)?;
            let row = SummaryRow {
                benchmark: bench.name.clone(),
                algorithm: "grid".into(),
                eps_x: g.eps_x,
                eps_f: g.eps_f,
                mesh_tolerance: None,
                initial_mesh: None,
                grid_points: Some(n),
                solution: best.clone(),
                objective: v,
                iterations: trace.len().max(1),
                total_millis: started.elapsed().as_secs_f64() * 1e3,
                mean_p1_millis: trace.mean_p1_millis(),
                mean_p2_millis: trace.mean_p2_millis(),
            };
            (best, v, trace, row)
        }
    };
    let _ = best_value;
    Ok(RunResult {
        row: row.check()?,
        trace,
        best,
        dim: cfg.dim()?,
        num_outputs: cfg.num_outputs()?,
    })
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn count_true_violations(cfg: &RunConfig, trace: &RunTrace) -> Option<usize> {
    match cfg.benchmark.as_str() {
        "quad" => Some(quad::true_feasibility_audit(trace).violations),
        "pid" => {
            let probe = pid::PidProblem::default_problem();
            Some(
                trace
                    .records
                    .iter()
                    .filter(|r| probe.true_values(&r.point).1 < 0.0)
                    .count(),
            )
        }
        _ => None,
    }
}

fn trajectory_csv(gains: &[f64]) -> Result<String, CliError> {
    let ctrl = pid::CascadeController::new(gains[0], gains[1], gains[2])
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let sim = pid::simulate(&pid::PlantModel::default_surrogate(), &ctrl, &pid::TuningSpec::default());
    let mut out = String::from("t,position_setpoint,position,speed_setpoint,speed\n");
    for i in 0..sim.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            sim.time[i], sim.position_setpoint[i], sim.position[i], sim.speed_setpoint[i],
            sim.speed[i]
        );
    }
    Ok(out)
}

/// `quad` / `pid`: one run of the configured algorithm; writes `trace.csv`,
/// `summary.json`, and (PID only) `trajectory_<name>.csv` files.
pub fn run_benchmark(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let result = match run_single(cfg, cfg.algorithm) {
        Ok(r) => r,
        Err(e @ CliError::Runtime(_)) => {
            // flush an (empty) trace so the failed run still leaves its files
            let header_only = RunTrace::default().to_csv(cfg.dim()?, cfg.num_outputs()?, true);
            let _ = write_file(out_dir, "trace.csv", &header_only);
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    write_file(
        out_dir,
        "trace.csv",
        &result.trace.to_csv(result.dim, result.num_outputs, true),
    )?;
    if cfg.benchmark == "pid" {
        let initial = pid::initial_safe_set();
        let probe = pid::PidProblem::default_problem();
        // best initial gains by true -J
        let best_initial = initial
            .iter()
            .max_by(|a, b| {
                let va = probe.true_values(a).0;
                let vb = probe.true_values(b).0;
                va.partial_cmp(&vb).unwrap()
            })
            .cloned()
            .unwrap();
        write_file(out_dir, "trajectory_initial.csv", &trajectory_csv(&best_initial)?)?;
        write_file(out_dir, "trajectory_final.csv", &trajectory_csv(&result.best)?)?;
    }
    let doc = SummaryDoc {
        config: cfg.clone(),
        rows: vec![result.row],
        true_violations: count_true_violations(cfg, &result.trace),
    };
    write_file(out_dir, "summary.json", &to_json(&doc)?)?;
    Ok(())
}

/// `compare`: both algorithms on the configured benchmark with identical
/// seeds and initial data; emits one summary row per algorithm.
pub fn run_compare(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let grid_result = run_single(cfg, Algorithm::Grid)?;
    let reform_result = run_single(cfg, Algorithm::Reform)?;
    write_file(
        out_dir,
        "trace_grid.csv",
        &grid_result.trace.to_csv(grid_result.dim, grid_result.num_outputs, true),
    )?;
    write_file(
        out_dir,
        "trace_reform.csv",
        &reform_result.trace.to_csv(reform_result.dim, reform_result.num_outputs, true),
    )?;
    let rows = vec![grid_result.row, reform_result.row];
    write_file(out_dir, "summary.csv", &rows_to_csv(&rows))?;
    let doc = SummaryDoc { config: cfg.clone(), rows, true_violations: None };
    write_file(out_dir, "summary.json", &to_json(&doc)?)?;
    Ok(())
}

/// Run every sweep cell (Cartesian product of mesh tolerances and initial
/// meshes) and return the rows in cell order. `jobs` worker threads pull
/// cells from a shared queue; each cell is an independent seeded run.
pub fn sweep_rows(cfg: &RunConfig, jobs: usize) -> Result<Vec<SummaryRow>, CliError> {
    let sweep: &SweepSection = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("field `sweep`: required".into()))?;
    let base = cfg
        .reform
        .as_ref()
        .ok_or_else(|| CliError::Config("field `reform`: required".into()))?;
    let mut cells: Vec<ReformConfig> = Vec::new();
    for delta in &sweep.initial_meshes {
        for tol in &sweep.mesh_tolerances {
            let mut r = base.clone();
            r.subproblem.initial_mesh = *delta;
            r.subproblem.mesh_tolerance = *tol;
            cells.push(r);
        }
    }
    let jobs = jobs.max(1).min(cells.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<SummaryRow, CliError>)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let mut cell_cfg = cfg.clone();
                cell_cfg.reform = Some(cells[i].clone());
                let row = run_single(&cell_cfg, Algorithm::Reform).map(|r| r.row);
                results.lock().unwrap().push((i, row));
            });
        }
    });
    let mut collected = results.into_inner().unwrap();
    collected.sort_by_key(|(i, _)| *i);
    collected.into_iter().map(|(_, r)| r).collect()
}

/// `sweep`: writes `sweep.csv` (one SummaryRow per cell) and `summary.json`.
pub fn run_sweep(cfg: &RunConfig, out_dir: &Path, jobs: usize) -> Result<(), CliError> {
    let rows = sweep_rows(cfg, jobs)?;
    write_file(out_dir, "sweep.csv", &rows_to_csv(&rows))?;
    let doc = SummaryDoc { config: cfg.clone(), rows, true_violations: None };
    write_file(out_dir, "summary.json", &to_json(&doc)?)?;
    Ok(())
}

/// Outcome of the GP self-test.
#[derive(Debug, Clone, Serialize)]
pub struct GpCheckReport {
    pub instances: usize,
    /// Worst residual of the training identity
    /// `mean(x_i) = y_i - (noise + jitter) * alpha_i`.
    pub worst_interpolation_error: f64,
    /// Worst mean/variance discrepancy between the rank-one virtual-
    /// observation update and a full refit on the augmented data.
    pub worst_virtual_vs_refit_error: f64,
    pub interpolation_tolerance: f64,
    pub virtual_tolerance: f64,
    pub passed: bool,
}

/// `gp-check`: seeded self-test of the GP layer. Interpolation residuals
/// and virtual-observation updates are compared against an independent
/// full refit.
pub fn gp_check(seed: u64) -> Result<GpCheckReport, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances = 100;
    let mut worst_interp: f64 = 0.0;
    let mut worst_virtual: f64 = 0.0;
    for _ in 0..instances {
        let dim = rng.gen_range(1..=3usize);
        let n = rng.gen_range(3..=10usize);
        let ls: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.3..1.0)).collect();
        let sv = rng.gen_range(0.5..2.0);
        let kernel = KernelSpec::squared_exponential(ls, sv).map_err(runtime)?;
        let inputs: Vec<Point> = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let outputs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let noise = 1e-6;
        let data = GpData::new(inputs.clone(), outputs.clone(), noise).map_err(runtime)?;
        let gp = GpPosterior::fit(kernel.clone(), data).map_err(runtime)?;
        // exact identity of the posterior mean at a training input:
        // (K + sigma^2 I) alpha = y implies mean(x_i) = y_i - sigma^2 alpha_i,
        // with sigma^2 the noise variance plus any stabilizing jitter
        let effective_noise = noise + gp.jitter();
        for (i, (x, y)) in inputs.iter().zip(&outputs).enumerate() {
            let (m, _) = gp.predict(x).map_err(runtime)?;
            let expected = y - effective_noise * gp.weights()[i];
            worst_interp = worst_interp.max((m - expected).abs());
        }
        // virtual observation vs full refit at a fresh point
        let xv: Point = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let yv = rng.gen_range(-1.0..1.0);
        let updated = gp.with_observation(&xv, yv).map_err(runtime)?;
        let mut inputs2 = inputs.clone();
        inputs2.push(xv);
        let mut outputs2 = outputs.clone();
        outputs2.push(yv);
        let refit = GpPosterior::fit(
            kernel,
            GpData::new(inputs2, outputs2, noise).map_err(runtime)?,
        )
        .map_err(runtime)?;
        for _ in 0..10 {
            let q: Point = (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let (m1, v1) = updated.predict(&q).map_err(runtime)?;
            let (m2, v2) = refit.predict(&q).map_err(runtime)?;
            worst_virtual = worst_virtual.max((m1 - m2).abs()).max((v1 - v2).abs());
        }
    }
    let interpolation_tolerance = 1e-5;
    let virtual_tolerance = 1e-9;
    Ok(GpCheckReport {
        instances,
        worst_interpolation_error: worst_interp,
        worst_virtual_vs_refit_error: worst_virtual,
        interpolation_tolerance,
        virtual_tolerance,
        passed: worst_interp <= interpolation_tolerance && worst_virtual <= virtual_tolerance,
    })
}

/// `gp-check` driver: writes the report and fails the run if it did not pass.
pub fn run_gp_check(seed: u64, out_dir: &Path) -> Result<(), CliError> {
    let report = gp_check(seed)?;
    write_file(out_dir, "summary.json", &to_json(&report)?)?;
    if !report.passed {
        return Err(CliError::Runtime(format!(
            "gp-check failed: interpolation {:e} (tol {:e}), virtual {:e} (tol {:e})",
            report.worst_interpolation_error,
            report.interpolation_tolerance,
            report.worst_virtual_vs_refit_error,
            report.virtual_tolerance
        )));
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))
}
