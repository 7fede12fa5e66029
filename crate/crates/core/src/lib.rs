//! Safe Bayesian optimization over unknown objectives and constraints.
//!
//! Two algorithm variants are provided on top of a shared Gaussian-process
//! uncertainty model:
//!
//! * [`grid`] — the classic SafeOpt loop that evaluates safe/maximizer/expander
//!   sets exhaustively over a finite lattice;
//! * [`reform`] — per-iteration point selection recast as constrained
//!   continuous subproblems solved by the generalized pattern search in
//!   [`pattern`].
//!
//! The [`bench`] module carries two reproducible test problems: a non-convex
//! analytic quadratic and a simulated cascade-PID tuning task.

pub mod bench;
pub mod error;
pub mod gp;
pub mod grid;
pub mod pattern;
pub mod reform;
pub mod space;
pub mod trace;

pub use error::CoreError;

/// A point in the search space.
pub type Point = Vec<f64>;

/// One oracle query result: index 0 is the objective, indices 1..=J the
/// constraints.
pub type Observation = Vec<f64>;

/// A suite of noisy measurement oracles for one benchmark problem.
pub trait OracleSuite {
    fn dim(&self) -> usize;
    /// Number of constraints J (the suite answers J+1 values per query).
    fn num_constraints(&self) -> usize;
    /// Query objective and all constraints at `x`.
    fn evaluate(&mut self, x: &[f64]) -> Observation;
}
