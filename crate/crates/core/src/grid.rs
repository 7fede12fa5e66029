//! Grid-based SafeOpt: exhaustive safe/maximizer/expander set computation
//! over a finite lattice. Serves as the correctness oracle and performance
//! comparison target for the reformulated algorithm.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::gp::{ConfidenceBand, GpPosterior};
use crate::space::BoxBounds;
use crate::trace::{RunTrace, TraceRecord};
use crate::{Observation, OracleSuite, Point};

/// Finite ordered discretization of the search box.
///
/// Lattice points are generated row-major with the first axis slowest, so
/// index = ((i0 * n1 + i1) * n2 + i2) ... ; this order defines argmax
/// tie-breaking.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<Point>,
    per_axis_counts: Vec<usize>,
}

impl Grid {
    pub fn lattice(bounds: &BoxBounds, per_axis_counts: &[usize]) -> Result<Self, CoreError> {
        if per_axis_counts.len() != bounds.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: bounds.dim(),
                got: per_axis_counts.len(),
            });
        }
        if per_axis_counts.iter().any(|&c| c == 0) {
            return Err(CoreError::InvalidParameter(
                "per-axis counts must be positive".into(),
            ));
        }
        let axes: Vec<Vec<f64>> = per_axis_counts
            .iter()
            .enumerate()
            .map(|(d, &c)| {
                let lo = bounds.lower[d];
                let hi = bounds.upper[d];
                if c == 1 {
                    vec![0.5 * (lo + hi)]
                } else {
                    (0..c)
                        .map(|i| lo + (hi - lo) * i as f64 / (c - 1) as f64)
                        .collect()
                }
            })
            .collect();
        let total: usize = per_axis_counts.iter().product();
        let mut points = Vec::with_capacity(total);
        let mut idx = vec![0usize; axes.len()];
        loop {
            points.push(idx.iter().enumerate().map(|(d, &i)| axes[d][i]).collect());
            // row-major increment, last axis fastest
            let mut d = axes.len();
            loop {
                if d == 0 {
                    return Ok(Self {
                        points,
                        per_axis_counts: per_axis_counts.to_vec(),
                    });
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < axes[d].len() {
                    break;
                }
                idx[d] = 0;
            }
        }
    }

    pub fn from_points(points: Vec<Point>) -> Self {
        let n = points.len();
        Self {
            points,
            per_axis_counts: vec![n],
        }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn per_axis_counts(&self) -> &[usize] {
        &self.per_axis_counts
    }
}

/// The bundle of fitted posteriors driving one SafeOpt run: index 0 is the
/// objective, indices 1..=J the constraints.
#[derive(Debug, Clone)]
pub struct SafeOptModel {
    pub posteriors: Vec<GpPosterior>,
    pub band: ConfidenceBand,
    pub j_min: f64,
    /// GP indices over which acquisition widths are maximized.
    pub width_indices: Vec<usize>,
}

impl SafeOptModel {
    pub fn new(
        posteriors: Vec<GpPosterior>,
        band: ConfidenceBand,
        j_min: f64,
        width_indices: Vec<usize>,
    ) -> Result<Self, CoreError> {
        if posteriors.len() < 2 {
            return Err(CoreError::InvalidParameter(
                "need at least one objective and one constraint posterior".into(),
            ));
        }
        let dim = posteriors[0].dim();
        if posteriors.iter().any(|p| p.dim() != dim) {
            return Err(CoreError::InvalidParameter(
                "all posteriors must share one input dimension".into(),
            ));
        }
        if width_indices.iter().any(|&i| i >= posteriors.len()) {
            return Err(CoreError::InvalidParameter(
                "width index out of range".into(),
            ));
        }
        Ok(Self {
            posteriors,
            band,
            j_min,
            width_indices,
        })
    }

    pub fn dim(&self) -> usize {
        self.posteriors[0].dim()
    }

    /// Number of constraints J.
    pub fn num_constraints(&self) -> usize {
        self.posteriors.len() - 1
    }

    pub fn bounds_at(&self, gp_index: usize, x: &[f64]) -> Result<(f64, f64), CoreError> {
        self.posteriors[gp_index].bounds(x, self.band)
    }

    pub fn width_at(&self, gp_index: usize, x: &[f64]) -> Result<f64, CoreError> {
        let (l, u) = self.bounds_at(gp_index, x)?;
        Ok(u - l)
    }

    /// Max width over the configured width indices, with the achieving index.
    pub fn max_width_at(&self, x: &[f64]) -> Result<(f64, usize), CoreError> {
        let mut best = f64::NEG_INFINITY;
        let mut best_idx = self.width_indices[0];
        for &i in &self.width_indices {
            let w = self.width_at(i, x)?;
            if w > best {
                best = w;
                best_idx = i;
            }
        }
        Ok((best, best_idx))
    }

    /// Minimum constraint lower bound over j = 1..=J.
    pub fn min_constraint_lower(&self, x: &[f64]) -> Result<f64, CoreError> {
        let mut m = f64::INFINITY;
        for j in 1..self.posteriors.len() {
            let (l, _) = self.bounds_at(j, x)?;
            m = m.min(l);
        }
        Ok(m)
    }

    /// Model-level safety: every constraint lower bound at or above J_min.
    pub fn is_model_safe(&self, x: &[f64]) -> Result<bool, CoreError> {
        Ok(self.min_constraint_lower(x)? >= self.j_min)
    }

    /// Append one observation (objective + constraints) to every posterior,
    /// returning the refitted model.
    pub fn with_observation(&self, x: &[f64], obs: &Observation) -> Result<Self, CoreError> {
        if obs.len() != self.posteriors.len() {
            return Err(CoreError::DimensionMismatch {
                expected: self.posteriors.len(),
                got: obs.len(),
            });
        }
        let mut posteriors = Vec::with_capacity(self.posteriors.len());
        for (p, &y) in self.posteriors.iter().zip(obs) {
            posteriors.push(p.with_observation(x, y)?);
        }
        Ok(Self {
            posteriors,
            band: self.band,
            j_min: self.j_min,
            width_indices: self.width_indices.clone(),
        })
    }
}

/// The three per-iteration index sets over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationSets {
    pub safe: Vec<usize>,
    pub maximizers: Vec<usize>,
    pub expanders: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecommendationSource {
    Maximizer,
    Expander,
}

/// The selected point of one iteration together with what drove it.
#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    pub point: Point,
    pub source: RecommendationSource,
    /// GP index achieving the maximal width at the point.
    pub driving_index: usize,
    pub width: f64,
    /// (l, u) per GP at the point, index 0 first.
    pub bounds_at_point: Vec<(f64, f64)>,
}

/// Instrumentation counters for the expander computation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExpanderStats {
    /// Auxiliary posterior fits performed (one per safe point per constraint).
    pub aux_fits: usize,
    /// Lower-bound evaluations against outside points.
    pub bound_evals: usize,
}

/// Safe set over the grid: points whose constraint lower bounds all reach
/// J_min. Objective bounds are not consulted. Errors if empty.
pub fn safe_set(model: &SafeOptModel, grid: &Grid) -> Result<Vec<usize>, CoreError> {
    let mut safe = Vec::new();
    for (i, x) in grid.points().iter().enumerate() {
        if model.min_constraint_lower(x)? >= model.j_min {
            safe.push(i);
        }
    }
    if safe.is_empty() {
        return Err(CoreError::SafeSetEmpty);
    }
    Ok(safe)
}

/// Maximizers: safe points whose objective upper bound reaches the best safe
/// objective lower bound. Never empty for a nonempty safe set.
pub fn maximizers(model: &SafeOptModel, grid: &Grid, safe: &[usize]) -> Result<Vec<usize>, CoreError> {
    let mut best_lower = f64::NEG_INFINITY;
    for &i in safe {
        let (l, _) = model.bounds_at(0, &grid.points()[i])?;
        best_lower = best_lower.max(l);
    }
    let mut out = Vec::new();
    for &i in safe {
        let (_, u) = model.bounds_at(0, &grid.points()[i])?;
        if u >= best_lower {
            out.push(i);
        }
    }
    Ok(out)
}

/// Expanders: safe points whose optimistic (virtual-observation) constraint
/// model certifies at least one outside grid point as safe.
pub fn expanders(model: &SafeOptModel, grid: &Grid, safe: &[usize]) -> Result<Vec<usize>, CoreError> {
    Ok(expanders_with_stats(model, grid, safe)?.0)
}

pub fn expanders_with_stats(
    model: &SafeOptModel,
    grid: &Grid,
    safe: &[usize],
) -> Result<(Vec<usize>, ExpanderStats), CoreError> {
    let mut stats = ExpanderStats::default();
    let safe_mask: std::collections::HashSet<usize> = safe.iter().copied().collect();
    let outside: Vec<usize> = (0..grid.len()).filter(|i| !safe_mask.contains(i)).collect();
    if outside.is_empty() {
        return Ok((Vec::new(), stats));
    }
    // Process candidates in descending max-width order: the result is a set
    // (order-independent) but the short-circuit cost is not.
    let mut order: Vec<usize> = safe.to_vec();
    let mut widths = Vec::with_capacity(order.len());
    for &i in &order {
        let (w, _) = model.max_width_at(&grid.points()[i])?;
        widths.push((i, w));
    }
    order.sort_by(|a, b| {
        let wa = widths.iter().find(|(i, _)| i == a).unwrap().1;
        let wb = widths.iter().find(|(i, _)| i == b).unwrap().1;
        wb.partial_cmp(&wa).unwrap().then(a.cmp(b))
    });

    let mut result = Vec::new();
    for &i in &order {
        let x_bar = &grid.points()[i];
        let mut aux = Vec::with_capacity(model.num_constraints());
        for j in 1..model.posteriors.len() {
            let (_, u) = model.bounds_at(j, x_bar)?;
            aux.push(model.posteriors[j].with_observation(x_bar, u)?);
            stats.aux_fits += 1;
        }
        'outer: for &o in &outside {
            let xp = &grid.points()[o];
            for a in &aux {
                stats.bound_evals += 1;
                let (l, _) = a.bounds(xp, model.band)?;
                if l < model.j_min {
                    continue 'outer;
                }
            }
            result.push(i);
            break;
        }
    }
    result.sort_unstable();
    Ok((result, stats))
}

pub fn iteration_sets(model: &SafeOptModel, grid: &Grid) -> Result<IterationSets, CoreError> {
    let safe = safe_set(model, grid)?;
    let maximizers = maximizers(model, grid, &safe)?;
    let expanders = expanders(model, grid, &safe)?;
    Ok(IterationSets {
        safe,
        maximizers,
        expanders,
    })
}

/// Pick the candidate from G_n union M_n with the widest confidence band.
/// Ties break by grid order then lower GP index; points in both sets are
/// tagged Maximizer.
pub fn recommend(
    model: &SafeOptModel,
    grid: &Grid,
    sets: &IterationSets,
) -> Result<Recommendation, CoreError> {
    let mut candidates: Vec<usize> = sets
        .maximizers
        .iter()
        .chain(&sets.expanders)
        .copied()
        .collect();
    candidates.sort_unstable();
    candidates.dedup();
    if candidates.is_empty() {
        return Err(CoreError::NoCandidates);
    }
    let mut best_idx = None;
    let mut best_width = f64::NEG_INFINITY;
    let mut best_gp = 0usize;
    for &i in &candidates {
        let x = &grid.points()[i];
        for &gi in &model.width_indices {
            let w = model.width_at(gi, x)?;
            if w > best_width {
                best_width = w;
                best_idx = Some(i);
                best_gp = gi;
            }
        }
    }
    let i = best_idx.expect("nonempty candidates");
    let x = grid.points()[i].clone();
    let source = if sets.maximizers.contains(&i) {
        RecommendationSource::Maximizer
    } else {
        RecommendationSource::Expander
    };
    let mut bounds_at_point = Vec::with_capacity(model.posteriors.len());
    for g in 0..model.posteriors.len() {
        bounds_at_point.push(model.bounds_at(g, &x)?);
    }
    Ok(Recommendation {
        point: x,
        source,
        driving_index: best_gp,
        width: best_width,
        bounds_at_point,
    })
}

/// Best estimate: the safe grid point maximizing the objective lower bound,
/// with that bound's value. Ties break by grid order.
pub fn best_estimate(
    model: &SafeOptModel,
    grid: &Grid,
    safe: &[usize],
) -> Result<(Point, f64), CoreError> {
    let mut best = f64::NEG_INFINITY;
    let mut best_i = None;
    for &i in safe {
        let (l, _) = model.bounds_at(0, &grid.points()[i])?;
        if l > best {
            best = l;
            best_i = Some(i);
        }
    }
    let i = best_i.ok_or(CoreError::SafeSetEmpty)?;
    Ok((grid.points()[i].clone(), best))
}

/// One full grid-SafeOpt iteration: compute sets, recommend, observe all
/// oracles at the recommendation, and refit every posterior.
pub fn grid_step(
    model: &SafeOptModel,
    grid: &Grid,
    oracles: &mut dyn OracleSuite,
) -> Result<(Recommendation, SafeOptModel), CoreError> {
    let sets = iteration_sets(model, grid)?;
    let rec = recommend(model, grid, &sets)?;
    let obs = oracles.evaluate(&rec.point);
    let updated = model.with_observation(&rec.point, &obs)?;
    Ok((rec, updated))
}

/// Stopping settings for a full grid-SafeOpt run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRunConfig {
    pub max_iterations: usize,
    /// Iterate-change tolerance; paired with `eps_f`, both must hold to stop
    /// early.
    pub eps_x: f64,
    /// Objective-change tolerance.
    pub eps_f: f64,
}

/// Full grid-SafeOpt loop: refit posteriors on all data each iteration,
/// compute the sets, recommend, observe, repeat. Returns the final best
/// estimate and a trace whose timing columns split set computation into
/// safe/maximizer time and expander time.
pub fn run(
    oracles: &mut dyn OracleSuite,
    initial: &[(Point, Vec<f64>)],
    model_cfg: &crate::reform::ModelConfig,
    grid: &Grid,
    cfg: &GridRunConfig,
) -> Result<(Point, f64, RunTrace), CoreError> {
    if cfg.max_iterations == 0 {
        return Err(CoreError::InvalidParameter("max_iterations must be >= 1".into()));
    }
    if initial.is_empty() {
        return Err(CoreError::InvalidParameter("initial safe set is empty".into()));
    }
    let num_outputs = model_cfg.num_outputs();
    let mut inputs: Vec<Point> = Vec::new();
    let mut outputs: Vec<Vec<f64>> = vec![Vec::new(); num_outputs];
    for (x, obs) in initial {
        if obs.len() != num_outputs {
            return Err(CoreError::DimensionMismatch {
                expected: num_outputs,
                got: obs.len(),
            });
        }
        inputs.push(x.clone());
        for (col, &v) in outputs.iter_mut().zip(obs) {
            col.push(v);
        }
    }

    let mut trace = RunTrace::default();
    let mut prev_point: Option<Point> = None;
    let mut prev_objective: Option<f64> = None;
    let mut n = 0usize;
    loop {
        n += 1;
        let model = model_cfg.fit(&inputs, &outputs)?;

        let t1 = Instant::now();
        let safe = safe_set(&model, grid)?;
        let maxi = maximizers(&model, grid, &safe)?;
        let p1_millis = t1.elapsed().as_secs_f64() * 1e3;

        let t2 = Instant::now();
        let expa = expanders(&model, grid, &safe)?;
        let p2_millis = t2.elapsed().as_secs_f64() * 1e3;

        let sets = IterationSets {
            safe,
            maximizers: maxi,
            expanders: expa,
        };
        let rec = recommend(&model, grid, &sets)?;
        let (_, l_star) = best_estimate(&model, grid, &sets.safe)?;

        let obs = oracles.evaluate(&rec.point);
        if obs.len() != num_outputs {
            return Err(CoreError::DimensionMismatch {
                expected: num_outputs,
                got: obs.len(),
            });
        }
        inputs.push(rec.point.clone());
        for (col, &v) in outputs.iter_mut().zip(&obs) {
            col.push(v);
        }

        let tolerances_met = match (&prev_point, prev_objective) {
            (Some(px), Some(pf)) => {
                let dx: f64 = rec
                    .point
                    .iter()
                    .zip(px)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                dx <= cfg.eps_x && (obs[0] - pf).abs() <= cfg.eps_f
            }
            _ => false,
        };
        prev_point = Some(rec.point.clone());
        prev_objective = Some(obs[0]);

        trace.push(TraceRecord {
            iteration: n,
            point: rec.point.clone(),
            source: rec.source,
            driving_index: rec.driving_index,
            width: rec.width,
            l_star,
            p1_millis,
            p1_solves: 1,
            p2_millis,
            p2_solves: 1,
            observations: obs,
            tolerances_met,
        });

        if n >= cfg.max_iterations || tolerances_met {
            break;
        }
    }

    let model = model_cfg.fit(&inputs, &outputs)?;
    let safe = safe_set(&model, grid)?;
    let (best_point, best_value) = best_estimate(&model, grid, &safe)?;
    Ok((best_point, best_value, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{GpData, GpPosterior, KernelSpec};

    fn band() -> ConfidenceBand {
        ConfidenceBand::new(2.0).unwrap()
    }

    fn fit1d(inputs: Vec<f64>, outputs: Vec<f64>, ls: f64, sv: f64, noise: f64) -> GpPosterior {
        let k = KernelSpec::squared_exponential(vec![ls], sv).unwrap();
        let data = GpData::new(inputs.into_iter().map(|v| vec![v]).collect(), outputs, noise).unwrap();
        GpPosterior::fit(k, data).unwrap()
    }

    fn grid1d(n: usize) -> Grid {
        let b = BoxBounds::new(vec![-1.0], vec![1.0]).unwrap();
        Grid::lattice(&b, &[n]).unwrap()
    }

    #[test]
    fn lattice_is_row_major() {
        let b = BoxBounds::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap();
        let g = Grid::lattice(&b, &[2, 3]).unwrap();
        assert_eq!(
            g.points(),
            &[
                vec![0.0, 0.0],
                vec![0.0, 1.0],
                vec![0.0, 2.0],
                vec![1.0, 0.0],
                vec![1.0, 1.0],
                vec![1.0, 2.0],
            ]
        );
    }

    #[test]
    fn empty_safe_set_is_error() {
        // prior constraint posterior: l = -2*sqrt(sv) < j_min everywhere
        let obj = fit1d(vec![], vec![], 0.5, 1.0, 0.0);
        let cst = fit1d(vec![], vec![], 0.5, 1.0, 0.0);
        let model = SafeOptModel::new(vec![obj, cst], band(), 0.0, vec![0, 1]).unwrap();
        assert!(matches!(
            safe_set(&model, &grid1d(5)),
            Err(CoreError::SafeSetEmpty)
        ));
    }

    #[test]
    fn noise_free_safe_datum_is_safe() {
        let obj = fit1d(vec![0.0], vec![0.0], 0.5, 1.0, 0.0);
        let cst = fit1d(vec![0.0], vec![1.0], 0.5, 1.0, 0.0);
        let model = SafeOptModel::new(vec![obj, cst], band(), 0.0, vec![0, 1]).unwrap();
        let g = grid1d(5); // includes 0.0
        let safe = safe_set(&model, &g).unwrap();
        assert!(safe.contains(&2), "grid point 0.0 should be safe: {safe:?}");
    }

    #[test]
    fn safe_set_matches_loop_oracle() {
        let obj = fit1d(vec![-0.5, 0.3], vec![0.2, 0.8], 0.4, 1.0, 0.01);
        let cst = fit1d(vec![-0.5, 0.3], vec![1.2, 0.9], 0.4, 1.0, 0.01);
        let model = SafeOptModel::new(vec![obj, cst], band(), 0.0, vec![0, 1]).unwrap();
        let g = grid1d(5);
        let safe = safe_set(&model, &g);
        // straight-loop re-implementation
        let mut expected = Vec::new();
        for (i, x) in g.points().iter().enumerate() {
            let mut ok = true;
            for j in 1..model.posteriors.len() {
                let (l, _) = model.posteriors[j].bounds(x, model.band).unwrap();
                if l < model.j_min {
                    ok = false;
                }
            }
            if ok {
                expected.push(i);
            }
        }
        match safe {
            Ok(s) => assert_eq!(s, expected),
            Err(_) => assert!(expected.is_empty()),
        }
    }

    #[test]
    fn single_safe_point_is_maximizer() {
        let obj = fit1d(vec![0.0], vec![0.5], 0.3, 1.0, 0.0);
        let cst = fit1d(vec![0.0], vec![1.0], 0.3, 1.0, 0.0);
        let model = SafeOptModel::new(vec![obj, cst], band(), 0.0, vec![0, 1]).unwrap();
        let g = grid1d(9);
        let safe = safe_set(&model, &g).unwrap();
        let m = maximizers(&model, &g, &safe).unwrap();
        assert!(!m.is_empty());
        for i in &m {
            assert!(safe.contains(i));
        }
    }

    #[test]
    fn whole_grid_safe_means_no_expanders() {
        let obj = fit1d(vec![0.0], vec![0.0], 5.0, 1.0, 0.0);
        let cst = fit1d(vec![0.0], vec![3.0], 5.0, 1.0, 0.0);
        let model = SafeOptModel::new(vec![obj, cst], band(), 0.0, vec![0, 1]).unwrap();
        let g = grid1d(5);
        let safe = safe_set(&model, &g).unwrap();
        assert_eq!(safe.len(), g.len());
        let e = expanders(&model, &g, &safe).unwrap();
        assert!(e.is_empty());
    }

    #[test]
    fn boundary_point_with_optimism_is_expander() {
        // one confident safe datum at 0; with a moderate lengthscale the
        // virtual upper-bound observation certifies a neighbor
        let obj = fit1d(vec![0.0], vec![0.0], 0.5, 1.0, 1e-4);
        let cst = fit1d(vec![0.0], vec![2.0], 0.5, 1.0, 1e-4);
        let model = SafeOptModel::new(vec![obj, cst], band(), 0.0, vec![0, 1]).unwrap();
        let g = grid1d(11);
        let safe = safe_set(&model, &g).unwrap();
        assert!(safe.len() < g.len(), "need outside points for this test");
        let e = expanders(&model, &g, &safe).unwrap();
        // brute-force re-implementation over the same grid
        let safe_mask: std::collections::HashSet<_> = safe.iter().copied().collect();
        let mut expected = Vec::new();
        for &i in &safe {
            let xb = &g.points()[i];
            let mut aux = Vec::new();
            for j in 1..model.posteriors.len() {
                let (_, u) = model.posteriors[j].bounds(xb, model.band).unwrap();
                aux.push(model.posteriors[j].with_observation(xb, u).unwrap());
            }
            let mut found = false;
            for (o, xp) in g.points().iter().enumerate() {
                if safe_mask.contains(&o) {
                    continue;
                }
                if aux
                    .iter()
                    .all(|a| a.bounds(xp, model.band).unwrap().0 >= model.j_min)
                {
                    found = true;
                    break;
                }
            }
            if found {
                expected.push(i);
            }
        }
        assert_eq!(e, expected);
        assert!(!e.is_empty(), "expected at least one expander");
    }

    #[test]
    fn recommend_prefers_widest_candidate() {
        let obj = fit1d(vec![-0.5, 0.5], vec![0.1, 0.2], 0.3, 1.0, 1e-4);
        let cst = fit1d(vec![-0.5, 0.5], vec![2.0, 2.0], 0.3, 1.0, 1e-4);
        let model = SafeOptModel::new(vec![obj, cst], band(), 0.0, vec![0, 1]).unwrap();
        let g = grid1d(9);
        let sets = iteration_sets(&model, &g).unwrap();
        let rec = recommend(&model, &g, &sets).unwrap();
        // exhaustive check
        let mut cands: Vec<usize> = sets.maximizers.iter().chain(&sets.expanders).copied().collect();
        cands.sort_unstable();
        cands.dedup();
        let mut best_w = f64::NEG_INFINITY;
        for &i in &cands {
            let (w, _) = model.max_width_at(&g.points()[i]).unwrap();
            best_w = best_w.max(w);
        }
        assert_eq!(rec.width, best_w);
        assert!(rec.width >= 0.0);
    }

    #[test]
    fn recommend_source_maximizer_on_overlap() {
        let sets = IterationSets {
            safe: vec![0, 1],
            maximizers: vec![0],
            expanders: vec![0, 1],
        };
        let obj = fit1d(vec![0.0], vec![0.5], 0.3, 1.0, 1e-4);
        let cst = fit1d(vec![0.0], vec![2.0], 0.3, 1.0, 1e-4);
        let model = SafeOptModel::new(vec![obj, cst], band(), 0.0, vec![0, 1]).unwrap();
        let g = Grid::from_points(vec![vec![0.0], vec![0.0]]);
        let rec = recommend(&model, &g, &sets).unwrap();
        assert_eq!(rec.source, RecommendationSource::Maximizer);
    }

    #[test]
    fn best_estimate_ties_break_by_grid_order() {
        let obj = fit1d(vec![0.0], vec![0.5], 10.0, 1.0, 0.0);
        let cst = fit1d(vec![0.0], vec![2.0], 10.0, 1.0, 0.0);
        let model = SafeOptModel::new(vec![obj, cst], band(), 0.0, vec![0, 1]).unwrap();
        // two identical points: first wins
        let g = Grid::from_points(vec![vec![0.0], vec![0.0]]);
        let safe = vec![0usize, 1usize];
        let (p, _) = best_estimate(&model, &g, &safe).unwrap();
        assert_eq!(p, vec![0.0]);
    }

    #[test]
    fn grid_run_traces_every_iteration_and_stays_model_safe() {
        struct Quad;
        impl OracleSuite for Quad {
            fn dim(&self) -> usize {
                1
            }
            fn num_constraints(&self) -> usize {
                1
            }
            fn evaluate(&mut self, x: &[f64]) -> Observation {
                vec![-x[0] * x[0], 1.0 - x[0].abs()]
            }
        }
        let model_cfg = crate::reform::ModelConfig {
            kernels: vec![
                KernelSpec::squared_exponential(vec![0.5], 1.0).unwrap(),
                KernelSpec::squared_exponential(vec![0.5], 1.0).unwrap(),
            ],
            noise_variances: vec![1e-6; 2],
            band: band(),
            j_min: 0.0,
            width_indices: vec![0, 1],
        };
        let g = grid1d(21);
        let initial = vec![(vec![0.0], vec![0.0, 1.0])];
        let cfg = GridRunConfig {
            max_iterations: 5,
            eps_x: 0.0,
            eps_f: 0.0,
        };
        let (best, best_l, trace) = run(&mut Quad, &initial, &model_cfg, &g, &cfg).unwrap();
        assert_eq!(trace.records.len(), 5);
        for (i, rec) in trace.records.iter().enumerate() {
            assert_eq!(rec.iteration, i + 1);
            assert!(rec.width >= 0.0);
        }
        assert!(g.points().contains(&best));
        assert!(best_l.is_finite());
        // deterministic on rerun
        let (best2, _, trace2) = run(&mut Quad, &initial, &model_cfg, &g, &cfg).unwrap();
        assert_eq!(best, best2);
        let pts: Vec<_> = trace.records.iter().map(|r| r.point.clone()).collect();
        let pts2: Vec<_> = trace2.records.iter().map(|r| r.point.clone()).collect();
        assert_eq!(pts, pts2);
    }

    #[test]
    fn grid_step_appends_one_observation_per_posterior() {
        struct Quad;
        impl OracleSuite for Quad {
            fn dim(&self) -> usize {
                1
            }
            fn num_constraints(&self) -> usize {
                1
            }
            fn evaluate(&mut self, x: &[f64]) -> Observation {
                vec![-x[0] * x[0], 1.0 - x[0].abs()]
            }
        }
        let obj = fit1d(vec![0.0], vec![0.0], 0.5, 1.0, 1e-4);
        let cst = fit1d(vec![0.0], vec![1.0], 0.5, 1.0, 1e-4);
        let model = SafeOptModel::new(vec![obj, cst], band(), 0.0, vec![0, 1]).unwrap();
        let g = grid1d(11);
        let before: Vec<usize> = model.posteriors.iter().map(|p| p.data().len()).collect();
        let (rec, updated) = grid_step(&model, &g, &mut Quad).unwrap();
        for (p, b) in updated.posteriors.iter().zip(before) {
            assert_eq!(p.data().len(), b + 1);
        }
        // recommended point was model-safe at selection time
        assert!(model.is_model_safe(&rec.point).unwrap());
    }
}
