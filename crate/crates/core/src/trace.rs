//! Per-iteration run traces and their CSV/JSON serialization.
//!
//! Trace CSV schema (one row per outer iteration, header names fixed):
//! `n, x0..x{d-1}, source, driving_index, width, l_star, p1_ms, p2_ms, obs0..obs{J}`
//! where `p1_ms` / `p2_ms` are the milliseconds spent on the maximizer and
//! expander subproblems of that iteration. Numeric formatting is
//! locale-independent.

use serde::Serialize;

use crate::grid::RecommendationSource;
use crate::{Observation, Point};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub point: Point,
    pub source: RecommendationSource,
    pub driving_index: usize,
    pub width: f64,
    pub l_star: f64,
    /// Milliseconds spent solving the maximizer subproblems this iteration.
    pub p1_millis: f64,
    /// Number of maximizer subproblem solves (feasible climbs) timed.
    pub p1_solves: usize,
    /// Milliseconds spent solving the expander subproblems this iteration.
    pub p2_millis: f64,
    /// Number of expander subproblem solves (feasible climbs) timed.
    pub p2_solves: usize,
    pub observations: Observation,
    /// Both stopping tolerances held at this iteration.
    pub tolerances_met: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
}

impl RunTrace {
    pub fn push(&mut self, record: TraceRecord) {
        if let Some(last) = self.records.last() {
            debug_assert!(record.iteration > last.iteration);
        }
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Mean milliseconds per maximizer-subproblem solve.
    pub fn mean_p1_millis(&self) -> f64 {
        per_solve(
            self.records.iter().map(|r| (r.p1_millis, r.p1_solves)),
        )
    }

    /// Mean milliseconds per expander-subproblem solve.
    pub fn mean_p2_millis(&self) -> f64 {
        per_solve(
            self.records.iter().map(|r| (r.p2_millis, r.p2_solves)),
        )
    }

    pub fn csv_header(&self, dim: usize, num_outputs: usize) -> String {
        let mut cols = vec!["n".to_string()];
        cols.extend((0..dim).map(|i| format!("x{i}")));
        cols.extend(
            ["source", "driving_index", "width", "l_star", "p1_ms", "p1_solves", "p2_ms", "p2_solves"]
                .iter()
                .map(|s| s.to_string()),
        );
        cols.extend((0..num_outputs).map(|i| format!("obs{i}")));
        cols.join(",")
    }

    /// Render the full trace as CSV. With `include_timings` false the timing
    /// columns are written as 0 so reruns are byte-comparable.
    pub fn to_csv(&self, dim: usize, num_outputs: usize, include_timings: bool) -> String {
        let mut out = String::new();
        out.push_str(&self.csv_header(dim, num_outputs));
        out.push('\n');
        for r in &self.records {
            let mut cols = vec![r.iteration.to_string()];
            cols.extend(r.point.iter().map(|v| fmt(*v)));
            cols.push(
                match r.source {
                    RecommendationSource::Maximizer => "maximizer",
                    RecommendationSource::Expander => "expander",
                }
                .to_string(),
            );
            cols.push(r.driving_index.to_string());
            cols.push(fmt(r.width));
            cols.push(fmt(r.l_star));
            if include_timings {
                cols.push(fmt(r.p1_millis));
                cols.push(r.p1_solves.to_string());
                cols.push(fmt(r.p2_millis));
                cols.push(r.p2_solves.to_string());
            } else {
                cols.push("0".into());
                cols.push(r.p1_solves.to_string());
                cols.push("0".into());
                cols.push(r.p2_solves.to_string());
            }
            cols.extend(r.observations.iter().map(|v| fmt(*v)));
            out.push_str(&cols.join(","));
            out.push('\n');
        }
        out
    }
}

fn per_solve(iter: impl Iterator<Item = (f64, usize)>) -> f64 {
    let mut millis = 0.0;
    let mut solves = 0usize;
    for (m, n) in iter {
        millis += m;
        solves += n;
    }
    if solves == 0 {
        0.0
    } else {
        millis / solves as f64
    }
}

fn fmt(v: f64) -> String {
    // shortest round-trip formatting, always with '.' as decimal separator
    format!("{v}")
}

/// End-of-run summary, emitted as JSON next to the trace CSV.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config: serde_json::Value,
    pub final_point: Point,
    pub final_value: f64,
    pub iterations: usize,
    pub total_millis: f64,
    pub mean_p1_millis: f64,
    pub mean_p2_millis: f64,
}
