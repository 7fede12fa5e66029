//! Benchmark problems: a non-convex analytic quadratic and a simulated
//! cascade-PID controller-tuning task.

pub mod pid;
pub mod quad;

use crate::error::CoreError;
use crate::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchmarkId {
    Quadratic,
    Pid,
}

impl std::str::FromStr for BenchmarkId {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "quad" | "quadratic" => Ok(Self::Quadratic),
            "pid" => Ok(Self::Pid),
            other => Err(CoreError::UnknownBenchmark(other.to_string())),
        }
    }
}

/// Initial safe set for a benchmark. For the PID task these are the four
/// safe gain triples of the tuning problem; for the quadratic they are
/// configured points inside the feasible region.
pub fn initial_safe_set(id: BenchmarkId) -> Vec<Point> {
    match id {
        BenchmarkId::Quadratic => quad::initial_safe_set(),
        BenchmarkId::Pid => pid::initial_safe_set(),
    }
}
