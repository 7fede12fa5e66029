//! Non-convex quadratic benchmark: a concave objective whose unconstrained
//! maximum lies inside an excluded disc, so the feasible optimum sits on the
//! disc boundary.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::space::BoxBounds;
use crate::trace::RunTrace;
use crate::{Observation, OracleSuite, Point};

/// `-(x+1)^2 - (y+0.5)^2`; unconstrained maximum at (-1, -0.5).
pub fn objective(p: &[f64]) -> f64 {
    -(p[0] + 1.0).powi(2) - (p[1] + 0.5).powi(2)
}

/// Constraint values `(g1, g2)`; the point is feasible iff both are >= 0.
/// g1 keeps the point inside a disc around (-0.5, 0.3); g2 excludes a disc
/// around the unconstrained maximum.
pub fn constraints(p: &[f64]) -> (f64, f64) {
    let g1 = 2.0 - (p[0] + 0.5).powi(2) - (p[1] - 0.3).powi(2);
    let g2 = (p[0] + 1.0).powi(2) + (p[1] + 0.5).powi(2) - 0.2;
    (g1, g2)
}

pub fn is_feasible(p: &[f64]) -> bool {
    let (g1, g2) = constraints(p);
    g1 >= 0.0 && g2 >= 0.0
}

/// Default search box.
pub fn bounds() -> BoxBounds {
    BoxBounds::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap()
}

/// Configured starting points inside the feasible region.
pub fn initial_safe_set() -> Vec<Point> {
    vec![
        vec![0.0, 0.0],
        vec![-0.3, 0.6],
        vec![0.2, 0.8],
        vec![-0.5, 0.5],
    ]
}

/// Oracle suite with optional Gaussian observation noise.
pub struct QuadraticProblem {
    noise_std: f64,
    rng: ChaCha8Rng,
}

impl QuadraticProblem {
    pub fn new(noise_std: f64, seed: u64) -> Self {
        assert!(noise_std >= 0.0, "noise std must be nonnegative");
        Self {
            noise_std,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn noise_free() -> Self {
        Self::new(0.0, 0)
    }

    fn noisy(&mut self, v: f64) -> f64 {
        if self.noise_std == 0.0 {
            v
        } else {
            let n = Normal::new(0.0, self.noise_std).unwrap();
            v + n.sample(&mut self.rng)
        }
    }
}

impl OracleSuite for QuadraticProblem {
    fn dim(&self) -> usize {
        2
    }

    fn num_constraints(&self) -> usize {
        2
    }

    fn evaluate(&mut self, x: &[f64]) -> Observation {
        let (g1, g2) = constraints(x);
        vec![
            self.noisy(objective(x)),
            self.noisy(g1),
            self.noisy(g2),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditReport {
    pub checked: usize,
    pub violations: usize,
    /// Most negative constraint value seen across recommended points; zero
    /// if everything was feasible.
    pub worst_margin: f64,
}

/// Evaluate the noise-free constraints at every recommended point of a trace
/// and report how often (and how badly) true feasibility was violated.
pub fn true_feasibility_audit(trace: &RunTrace) -> AuditReport {
    let mut report = AuditReport::default();
    for rec in &trace.records {
        report.checked += 1;
        let (g1, g2) = constraints(&rec.point);
        let worst = g1.min(g2);
        if worst < 0.0 {
            report.violations += 1;
            report.worst_margin = report.worst_margin.min(worst);
        }
    }
    report
}
