//! Generalized pattern search with extreme-barrier constraint handling.
//!
//! The solver maximizes a black-box objective over a box, rejecting
//! candidates that violate any hard constraint (value < 0) by assigning them
//! a barrier value of negative infinity. Each poll is complete: all pattern
//! directions are evaluated and the best feasible candidate wins, with ties
//! resolved by the lowest pattern index, so results are deterministic even if
//! candidate evaluations run concurrently. The mesh size doubles after a
//! successful poll and halves after an unsuccessful one, and the search stops
//! once the mesh size drops below the tolerance or the evaluation budget is
//! exhausted.

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::space::BoxBounds;
use crate::Point;

pub const EXPANSION_FACTOR: f64 = 2.0;
pub const CONTRACTION_FACTOR: f64 = 0.5;

/// Ordered set of polling directions. The order is fixed and defines the
/// deterministic polling order used for tie-breaking.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    directions: Vec<Vec<f64>>,
}

/// Which pattern to instantiate for a given dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatternKind {
    /// The 2n coordinate directions, ordered +e1..+en, -e1..-en. Default.
    Coordinate,
    /// The n+1 minimal positive basis: e1..en followed by (-1, ..., -1).
    MinimalBasis,
    /// The three-direction 2-D pattern [0,1], [1,0], [-1,-1].
    ThreeDirection2d,
}

impl Pattern {
    pub fn new(directions: Vec<Vec<f64>>) -> Result<Self, CoreError> {
        if directions.is_empty() {
            return Err(CoreError::InvalidParameter("pattern has no directions".into()));
        }
        let n = directions[0].len();
        if directions.iter().any(|d| d.len() != n) {
            return Err(CoreError::InvalidParameter(
                "pattern directions must share one dimension".into(),
            ));
        }
        Ok(Self { directions })
    }

    pub fn for_kind(kind: PatternKind, dim: usize) -> Result<Self, CoreError> {
        match kind {
            PatternKind::Coordinate => Ok(Self::coordinate(dim)),
            PatternKind::MinimalBasis => Ok(Self::minimal_basis(dim)),
            PatternKind::ThreeDirection2d => {
                if dim != 2 {
                    return Err(CoreError::InvalidParameter(format!(
                        "three-direction pattern is 2-D only, got dimension {dim}"
                    )));
                }
                Ok(Self::three_direction_2d())
            }
        }
    }

    pub fn coordinate(dim: usize) -> Self {
        let mut directions = Vec::with_capacity(2 * dim);
        for i in 0..dim {
            let mut d = vec![0.0; dim];
            d[i] = 1.0;
            directions.push(d);
        }
        for i in 0..dim {
            let mut d = vec![0.0; dim];
            d[i] = -1.0;
            directions.push(d);
        }
        Self { directions }
    }

    pub fn minimal_basis(dim: usize) -> Self {
        let mut directions = Vec::with_capacity(dim + 1);
        for i in 0..dim {
            let mut d = vec![0.0; dim];
            d[i] = 1.0;
            directions.push(d);
        }
        directions.push(vec![-1.0; dim]);
        Self { directions }
    }

    pub fn three_direction_2d() -> Self {
        Self {
            directions: vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![-1.0, -1.0]],
        }
    }

    pub fn directions(&self) -> &[Vec<f64>] {
        &self.directions
    }

    pub fn dim(&self) -> usize {
        self.directions[0].len()
    }

    /// Largest direction norm; used for convergence-radius estimates.
    pub fn radius(&self) -> f64 {
        self.directions
            .iter()
            .map(|d| d.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Incumbent point and mesh size. The mesh size is tracked as
/// `base * 2^exponent` so the power-of-two invariant holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshState {
    pub incumbent: Point,
    pub incumbent_value: f64,
    base_mesh: f64,
    exponent: i32,
}

impl MeshState {
    pub fn new(incumbent: Point, incumbent_value: f64, initial_mesh: f64) -> Result<Self, CoreError> {
        if !(initial_mesh > 0.0) {
            return Err(CoreError::InvalidParameter("mesh size must be positive".into()));
        }
        Ok(Self {
            incumbent,
            incumbent_value,
            base_mesh: initial_mesh,
            exponent: 0,
        })
    }

    pub fn mesh_size(&self) -> f64 {
        // exact for |exponent| within f64 range
        self.base_mesh * 2f64.powi(self.exponent)
    }

    pub fn exponent(&self) -> i32 {
        self.exponent
    }

    fn expand(&mut self) {
        self.exponent += 1;
    }

    fn contract(&mut self) {
        self.exponent -= 1;
    }
}

/// Solver configuration. Expansion and contraction factors are fixed at 2
/// and 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsConfig {
    pub initial_mesh: f64,
    pub mesh_tolerance: f64,
    pub max_evaluations: usize,
    pub multistart_count: usize,
}

impl PsConfig {
    pub fn new(
        initial_mesh: f64,
        mesh_tolerance: f64,
        max_evaluations: usize,
        multistart_count: usize,
    ) -> Result<Self, CoreError> {
        if !(initial_mesh > 0.0) {
            return Err(CoreError::InvalidParameter("initial_mesh must be positive".into()));
        }
        if !(mesh_tolerance > 0.0) || mesh_tolerance >= initial_mesh {
            return Err(CoreError::InvalidParameter(
                "mesh_tolerance must satisfy 0 < tolerance < initial_mesh".into(),
            ));
        }
        if max_evaluations == 0 {
            return Err(CoreError::InvalidParameter("max_evaluations must be positive".into()));
        }
        Ok(Self {
            initial_mesh,
            mesh_tolerance,
            max_evaluations,
            multistart_count,
        })
    }
}

/// A maximization problem with black-box hard constraints (feasible iff
/// every constraint value is >= 0) over a box.
pub struct PsProblem<'a> {
    pub objective: Box<dyn Fn(&[f64]) -> f64 + 'a>,
    pub hard_constraints: Vec<Box<dyn Fn(&[f64]) -> f64 + 'a>>,
    pub bounds: BoxBounds,
}

impl<'a> PsProblem<'a> {
    pub fn feasible(&self, x: &[f64]) -> bool {
        self.bounds.contains(x) && self.hard_constraints.iter().all(|c| c(x) >= 0.0)
    }

    /// Objective with the extreme barrier applied.
    fn barrier_value(&self, x: &[f64]) -> f64 {
        if self.feasible(x) {
            (self.objective)(x)
        } else {
            f64::NEG_INFINITY
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PsStatus {
    MeshConverged,
    EvalBudget,
    InfeasibleStart,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsResult {
    pub best_point: Point,
    pub best_value: f64,
    pub final_mesh: f64,
    pub evaluations: usize,
    pub status: PsStatus,
    /// How many of the attempted starts (primary + extras) were feasible
    /// and actually climbed.
    pub feasible_starts: usize,
}

/// Poll candidates `x^k + delta^k d` in pattern order.
pub fn poll_points(state: &MeshState, pattern: &Pattern) -> Vec<Point> {
    let delta = state.mesh_size();
    pattern
        .directions()
        .iter()
        .map(|d| {
            state
                .incumbent
                .iter()
                .zip(d)
                .map(|(x, di)| x + delta * di)
                .collect()
        })
        .collect()
}

/// One complete poll. Returns the updated state and whether the incumbent
/// moved. The number of objective evaluations equals the pattern size.
pub fn poll_step(problem: &PsProblem, state: &MeshState, pattern: &Pattern) -> (MeshState, bool) {
    let candidates = poll_points(state, pattern);
    let mut best_idx = None;
    let mut best_val = f64::NEG_INFINITY;
    for (i, c) in candidates.iter().enumerate() {
        let v = problem.barrier_value(c);
        if v > best_val {
            best_val = v;
            best_idx = Some(i);
        }
    }
    let mut next = state.clone();
    if let Some(i) = best_idx {
        if best_val > state.incumbent_value {
            next.incumbent = candidates[i].clone();
            next.incumbent_value = best_val;
            next.expand();
            return (next, true);
        }
    }
    next.contract();
    (next, false)
}

/// Run pattern search from `start` until the mesh converges or the budget
/// runs out. Additional starts (up to `config.multistart_count`) are rerun
/// and the best feasible result returned.
pub fn maximize(
    problem: &PsProblem,
    start: &[f64],
    extra_starts: &[Point],
    config: &PsConfig,
    pattern: &Pattern,
) -> PsResult {
    let mut best = maximize_single(problem, start, config, pattern);
    let mut feasible = best.feasible_starts;
    for s in extra_starts.iter().take(config.multistart_count) {
        let r = maximize_single(problem, s, config, pattern);
        feasible += r.feasible_starts;
        if r.status != PsStatus::InfeasibleStart
            && (best.status == PsStatus::InfeasibleStart || r.best_value > best.best_value)
        {
            best = r;
        }
    }
    best.feasible_starts = feasible;
    best
}

fn maximize_single(problem: &PsProblem, start: &[f64], config: &PsConfig, pattern: &Pattern) -> PsResult {
    if !problem.feasible(start) {
        return PsResult {
            best_point: start.to_vec(),
            best_value: f64::NEG_INFINITY,
            final_mesh: config.initial_mesh,
            evaluations: 0,
            status: PsStatus::InfeasibleStart,
            feasible_starts: 0,
        };
    }
    let start_value = (problem.objective)(start);
    let mut state = MeshState::new(start.to_vec(), start_value, config.initial_mesh)
        .expect("validated initial mesh");
    let mut evaluations = 1usize;
    let status = loop {
        if state.mesh_size() <= config.mesh_tolerance {
            break PsStatus::MeshConverged;
        }
        if evaluations >= config.max_evaluations {
            break PsStatus::EvalBudget;
        }
        let (next, _moved) = poll_step(problem, &state, pattern);
        evaluations += pattern.directions().len();
        debug_assert!(next.incumbent_value >= state.incumbent_value);
        state = next;
    };
    let final_mesh = state.mesh_size();
    PsResult {
        best_point: state.incumbent,
        best_value: state.incumbent_value,
        final_mesh,
        evaluations,
        status,
        feasible_starts: 1,
    }
}
