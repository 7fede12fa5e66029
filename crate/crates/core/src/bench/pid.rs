//! Cascade-PID controller-tuning benchmark on a surrogate linear plant.
//!
//! The loop is an outer position proportional controller commanding an inner
//! speed PI controller that drives a control-to-speed plant; position is the
//! integral of speed. The surrogate plant is a lightly damped second-order
//! speed dynamics behind a first-order actuator lag:
//!
//! `G(s) = k * wn^2 / ((s^2 + 2 zeta wn s + wn^2) (tau s + 1))`
//!
//! with k = 1.45, wn = 300, zeta = 0.42, tau = 0.046. With these values the
//! four gain triples of [`initial_safe_set`] are closed-loop stable (dominant
//! eigenvalue real parts below -1.8/s, well damped enough that the 1 ms
//! sampled loop tracks the continuous one) while the witness triple
//! (30, 0, 5) of [`unsafe_probe_point`] is unstable (dominant eigenvalue
//! ~ +1.2/s), as is the high-gain box corner (110, 50, 50).
//!
//! Stability is judged from the simulated speed trajectory: the least-squares
//! slope `p1` over its local maxima must stay below a small margin. Growing
//! peaks (p1 > margin) mark the controller unsafe.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::CoreError;
use crate::space::BoxBounds;
use crate::{Observation, OracleSuite, Point};

/// Speed saturation; a run is truncated (and flagged diverged) once the
/// speed magnitude passes this bound, keeping unstable trajectories finite.
pub const SATURATION: f64 = 1e6;

/// Continuous-time surrogate plant (control input -> speed output) plus
/// simulation grid settings.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub sample_time: f64,
    pub t_f: f64,
}

impl PlantModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DVector<f64>,
        c: DVector<f64>,
        sample_time: f64,
        t_f: f64,
    ) -> Result<Self, CoreError> {
        if !(sample_time > 0.0) {
            return Err(CoreError::InvalidParameter("sample_time must be positive".into()));
        }
        if t_f < 10.0 * sample_time {
            return Err(CoreError::InvalidParameter(
                "t_f must cover at least 10 sample periods".into(),
            ));
        }
        let n = a.nrows();
        if a.ncols() != n || b.len() != n || c.len() != n {
            return Err(CoreError::InvalidParameter(
                "state-space dimensions disagree".into(),
            ));
        }
        Ok(Self {
            a,
            b,
            c,
            sample_time,
            t_f,
        })
    }

    /// Default surrogate with k = 1.45, wn = 300, zeta = 0.42, tau = 0.046,
    /// 1 ms sampling over a 2 s horizon.
    pub fn default_surrogate() -> Self {
        Self::surrogate(1.45, 300.0, 0.42, 0.046, 0.001, 2.0)
    }

    pub fn surrogate(
        gain: f64,
        natural_frequency: f64,
        damping: f64,
        actuator_lag: f64,
        sample_time: f64,
        t_f: f64,
    ) -> Self {
        let wn2 = natural_frequency * natural_frequency;
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[
                0.0,
                1.0,
                0.0,
                -wn2,
                -2.0 * damping * natural_frequency,
                gain * wn2,
                0.0,
                0.0,
                -1.0 / actuator_lag,
            ],
        );
        let b = DVector::from_vec(vec![0.0, 0.0, 1.0 / actuator_lag]);
        let c = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        Self::new(a, b, c, sample_time, t_f).expect("valid surrogate parameters")
    }

    /// Exact zero-order-hold discretization (Ad, Bd) via the augmented
    /// matrix exponential.
    pub fn discretize(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.a.nrows();
        let mut m = DMatrix::zeros(n + 1, n + 1);
        m.view_mut((0, 0), (n, n)).copy_from(&(&self.a * self.sample_time));
        m.view_mut((0, n), (n, 1))
            .copy_from(&(&self.b * self.sample_time));
        let e = m.exp();
        let ad = e.view((0, 0), (n, n)).into_owned();
        let bd = DVector::from_iterator(n, e.view((0, n), (n, 1)).iter().copied());
        (ad, bd)
    }
}

/// Cascade controller gains: outer position proportional gain and inner
/// speed PI gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeController {
    pub kp: f64,
    pub kv: f64,
    pub kvi: f64,
}

impl CascadeController {
    pub fn new(kp: f64, kv: f64, kvi: f64) -> Result<Self, CoreError> {
        let b = search_box();
        if !b.contains(&[kp, kv, kvi]) {
            return Err(CoreError::InvalidParameter(format!(
                "gains ({kp}, {kv}, {kvi}) outside the search box"
            )));
        }
        Ok(Self { kp, kv, kvi })
    }
}

/// Search box for the gains: [0, 110] x [0, 50] x [0, 50].
pub fn search_box() -> BoxBounds {
    BoxBounds::new(vec![0.0, 0.0, 0.0], vec![110.0, 50.0, 50.0]).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceKind {
    /// Ramp from 0 to 0.9 over the first 0.5 s, then hold.
    Trapezoid,
    /// Sinusoid truncated into [0, 0.9].
    TruncatedSinusoid,
    /// Constant position setpoint.
    Constant(f64),
}

impl ReferenceKind {
    pub fn position_setpoint(&self, t: f64) -> f64 {
        match self {
            ReferenceKind::Trapezoid => (t / 0.5).min(1.0) * 0.9,
            ReferenceKind::TruncatedSinusoid => {
                (1.2 * (std::f64::consts::PI * t).sin()).clamp(0.0, 0.9)
            }
            ReferenceKind::Constant(c) => *c,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ReferenceKind::Trapezoid => "trapezoid",
            ReferenceKind::TruncatedSinusoid => "sinusoid",
            ReferenceKind::Constant(_) => "constant",
        }
    }
}

/// Objective/constraint settings for the tuning task.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningSpec {
    /// Weight on the integrated absolute position error.
    pub gamma: f64,
    pub reference: ReferenceKind,
    /// Peak-slope margin: the controller is metric-stable while
    /// `p1 <= stability_margin`.
    pub stability_margin: f64,
    /// Floor applied to the stability oracle so diverged runs still produce
    /// finite, well-scaled observations.
    pub constraint_floor: f64,
}

impl Default for TuningSpec {
    fn default() -> Self {
        Self {
            gamma: 1000.0,
            reference: ReferenceKind::Trapezoid,
            stability_margin: 0.005,
            constraint_floor: -100.0,
        }
    }
}

/// Time-gridded closed-loop trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub time: Vec<f64>,
    pub speed: Vec<f64>,
    pub position: Vec<f64>,
    pub speed_setpoint: Vec<f64>,
    pub position_setpoint: Vec<f64>,
    /// Speed passed the saturation bound and the run was truncated there.
    pub diverged: bool,
}

impl SimResult {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }
}

/// Fixed-step closed-loop simulation: ZOH-discretized plant, discrete
/// cascade controller, position integrated from speed. Deterministic.
pub fn simulate(plant: &PlantModel, ctrl: &CascadeController, spec: &TuningSpec) -> SimResult {
    let (ad, bd) = plant.discretize();
    let dt = plant.sample_time;
    let steps = (plant.t_f / dt).round() as usize;

    let n = plant.a.nrows();
    let mut x = DVector::zeros(n);
    let mut position = 0.0;
    let mut integral = 0.0;

    let mut result = SimResult {
        time: Vec::with_capacity(steps + 1),
        speed: Vec::with_capacity(steps + 1),
        position: Vec::with_capacity(steps + 1),
        speed_setpoint: Vec::with_capacity(steps + 1),
        position_setpoint: Vec::with_capacity(steps + 1),
        diverged: false,
    };

    for i in 0..=steps {
        let t = i as f64 * dt;
        let speed = plant.c.dot(&x);
        let p_set = spec.reference.position_setpoint(t);
        let e_p = p_set - position;
        let s_set = ctrl.kp * e_p;
        let e_s = s_set - speed;
        let u = ctrl.kv * e_s + ctrl.kvi * integral;

        result.time.push(t);
        result.speed.push(speed);
        result.position.push(position);
        result.speed_setpoint.push(s_set);
        result.position_setpoint.push(p_set);

        if !speed.is_finite() || speed.abs() > SATURATION || position.abs() > SATURATION {
            result.diverged = true;
            break;
        }

        x = &ad * &x + &bd * u;
        position += speed * dt;
        integral += e_s * dt;
    }
    result
}

/// Least-squares slope of the speed trajectory's local maxima. Peaks use a
/// strict rise and non-strict fall (flat tops count once). Fewer than two
/// peaks yields exactly zero.
pub fn peak_slope(result: &SimResult) -> f64 {
    let s = &result.speed;
    if s.len() < 3 {
        return 0.0;
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for i in 1..s.len() - 1 {
        if s[i] > s[i - 1] && s[i] >= s[i + 1] {
            times.push(result.time[i]);
            values.push(s[i]);
        }
    }
    if times.len() < 2 {
        return 0.0;
    }
    // least squares through (t, peak)
    let n = times.len() as f64;
    let mean_t: f64 = times.iter().sum::<f64>() / n;
    let mean_v: f64 = values.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, v) in times.iter().zip(&values) {
        num += (t - mean_t) * (v - mean_v);
        den += (t - mean_t) * (t - mean_t);
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Tuning cost `J = gamma * integral |P - P_s| dt + max S` (trapezoidal
/// integration over the available trajectory).
pub fn tuning_objective(result: &SimResult, spec: &TuningSpec) -> f64 {
    let mut integral = 0.0;
    for i in 1..result.len() {
        let e0 = (result.position[i - 1] - result.position_setpoint[i - 1]).abs();
        let e1 = (result.position[i] - result.position_setpoint[i]).abs();
        integral += 0.5 * (e0 + e1) * (result.time[i] - result.time[i - 1]);
    }
    let max_speed = result.speed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    spec.gamma * integral + max_speed
}

/// Safety oracle `stability_margin - p1`: nonnegative iff metric-stable.
/// Diverged runs are evaluated on their finite prefix; a diverged run with
/// too few peaks for a slope fit falls to the configured floor.
pub fn stability_oracle(result: &SimResult, spec: &TuningSpec) -> f64 {
    let p1 = peak_slope(result);
    if result.diverged && p1 <= spec.stability_margin {
        return spec.constraint_floor;
    }
    (spec.stability_margin - p1).max(spec.constraint_floor)
}

/// The four safe gain triples of the tuning task's initial safe set.
pub fn initial_safe_set() -> Vec<Point> {
    vec![
        vec![10.0, 0.0, 5.0],
        vec![20.0, 0.4, 50.0],
        vec![42.0, 0.3, 12.0],
        vec![90.0, 0.5, 1.0],
    ]
}

/// A gain triple that is unstable on the surrogate; exposed separately for
/// rejection tests.
pub fn unsafe_probe_point() -> Point {
    vec![30.0, 0.0, 5.0]
}

/// Oracle suite over the gain triple (objective is -J, constraint is the
/// stability oracle) with optional observation noise.
pub struct PidProblem {
    pub plant: PlantModel,
    pub spec: TuningSpec,
    noise_std: f64,
    rng: ChaCha8Rng,
}

impl PidProblem {
    pub fn new(plant: PlantModel, spec: TuningSpec, noise_std: f64, seed: u64) -> Self {
        assert!(noise_std >= 0.0);
        Self {
            plant,
            spec,
            noise_std,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn default_problem() -> Self {
        Self::new(PlantModel::default_surrogate(), TuningSpec::default(), 0.0, 0)
    }

    fn noisy(&mut self, v: f64) -> f64 {
        if self.noise_std == 0.0 {
            v
        } else {
            let n = Normal::new(0.0, self.noise_std).unwrap();
            v + n.sample(&mut self.rng)
        }
    }

    /// Noise-free evaluation of (-J, stability oracle) at the gains.
    pub fn true_values(&self, gains: &[f64]) -> (f64, f64) {
        let ctrl = CascadeController {
            kp: gains[0],
            kv: gains[1],
            kvi: gains[2],
        };
        let result = simulate(&self.plant, &ctrl, &self.spec);
        let j = tuning_objective(&result, &self.spec);
        let h = stability_oracle(&result, &self.spec);
        (-j, h)
    }
}

impl OracleSuite for PidProblem {
    fn dim(&self) -> usize {
        3
    }

    fn num_constraints(&self) -> usize {
        1
    }

    fn evaluate(&mut self, x: &[f64]) -> Observation {
        let (neg_j, h) = self.true_values(x);
        vec![self.noisy(neg_j), self.noisy(h)]
    }
}
