//! Gaussian process regression with confidence bounds.
//!
//! The posterior caches a Cholesky factorization of `K_R + sigma_w^2 I` so
//! that repeated predictions only cost one triangular solve. Appending an
//! observation (real or virtual) produces a fresh posterior by refitting;
//! posteriors are immutable and safe to read concurrently.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    SquaredExponential,
}

/// Stationary covariance function with per-dimension lengthscales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
}

impl KernelSpec {
    pub fn squared_exponential(
        lengthscales: Vec<f64>,
        signal_variance: f64,
    ) -> Result<Self, CoreError> {
        if lengthscales.is_empty() || lengthscales.iter().any(|l| !(*l > 0.0)) {
            return Err(CoreError::InvalidParameter(
                "all lengthscales must be positive".into(),
            ));
        }
        if !(signal_variance > 0.0) {
            return Err(CoreError::InvalidParameter(
                "signal_variance must be positive".into(),
            ));
        }
        Ok(Self {
            family: KernelFamily::SquaredExponential,
            lengthscales,
            signal_variance,
        })
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Covariance k(a, b). Errors on dimension mismatch.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64, CoreError> {
        if a.len() != self.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim(),
                got: a.len(),
            });
        }
        if b.len() != self.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim(),
                got: b.len(),
            });
        }
        Ok(self.eval_raw(a, b))
    }

    fn eval_raw(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.family {
            KernelFamily::SquaredExponential => {
                let mut d2 = 0.0;
                for i in 0..a.len() {
                    let d = (a[i] - b[i]) / self.lengthscales[i];
                    d2 += d * d;
                }
                self.signal_variance * (-0.5 * d2).exp()
            }
        }
    }
}

/// Training data for one scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct GpData {
    pub inputs: Vec<Point>,
    pub outputs: Vec<f64>,
    pub noise_variance: f64,
}

impl GpData {
    pub fn new(inputs: Vec<Point>, outputs: Vec<f64>, noise_variance: f64) -> Result<Self, CoreError> {
        if inputs.len() != outputs.len() {
            return Err(CoreError::InvalidParameter(format!(
                "inputs ({}) and outputs ({}) must have equal length",
                inputs.len(),
                outputs.len()
            )));
        }
        if !(noise_variance >= 0.0) {
            return Err(CoreError::InvalidParameter(
                "noise_variance must be nonnegative".into(),
            ));
        }
        Ok(Self {
            inputs,
            outputs,
            noise_variance,
        })
    }

    pub fn empty(noise_variance: f64) -> Self {
        Self {
            inputs: Vec::new(),
            outputs: Vec::new(),
            noise_variance,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Confidence-band multiplier beta: bounds are `mu -/+ beta * sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub beta: f64,
}

impl ConfidenceBand {
    pub fn new(beta: f64) -> Result<Self, CoreError> {
        if !(beta > 0.0) {
            return Err(CoreError::InvalidParameter("beta must be positive".into()));
        }
        Ok(Self { beta })
    }
}

/// Fitted Gaussian process posterior over one scalar output.
#[derive(Debug)]
pub struct GpPosterior {
    kernel: KernelSpec,
    data: GpData,
    factor: Option<Cholesky<f64, Dyn>>,
    weights: DVector<f64>,
    jitter: f64,
    clamp_count: AtomicU64,
}

impl Clone for GpPosterior {
    fn clone(&self) -> Self {
        Self {
            kernel: self.kernel.clone(),
            data: self.data.clone(),
            factor: self.factor.clone(),
            weights: self.weights.clone(),
            jitter: self.jitter,
            clamp_count: AtomicU64::new(self.clamp_count.load(Ordering::Relaxed)),
        }
    }
}

impl GpPosterior {
    /// Fit a posterior: factorize `K_R + sigma_w^2 I` and solve for the
    /// weight vector. `R = 0` yields the prior.
    ///
    /// Jitter escalation: if the factorization fails, a diagonal jitter
    /// starting at `1e-10 * signal_variance` is added and escalated by 10x
    /// up to `1e-4 * signal_variance` before giving up.
    pub fn fit(kernel: KernelSpec, data: GpData) -> Result<Self, CoreError> {
        for x in &data.inputs {
            if x.len() != kernel.dim() {
                return Err(CoreError::DimensionMismatch {
                    expected: kernel.dim(),
                    got: x.len(),
                });
            }
        }
        let r = data.len();
        if r == 0 {
            return Ok(Self {
                kernel,
                data,
                factor: None,
                weights: DVector::zeros(0),
                jitter: 0.0,
                clamp_count: AtomicU64::new(0),
            });
        }
        let mut k = DMatrix::zeros(r, r);
        for i in 0..r {
            for j in i..r {
                let v = kernel.eval_raw(&data.inputs[i], &data.inputs[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        for i in 0..r {
            k[(i, i)] += data.noise_variance;
        }

        let mut jitter = 0.0;
        let max_jitter = 1e-4 * kernel.signal_variance;
        let factor = loop {
            let mut kj = k.clone();
            if jitter > 0.0 {
                for i in 0..r {
                    kj[(i, i)] += jitter;
                }
            }
            match Cholesky::new(kj) {
                Some(c) => break c,
                None => {
                    if jitter == 0.0 {
                        jitter = 1e-10 * kernel.signal_variance;
                    } else if jitter * 10.0 <= max_jitter * (1.0 + 1e-12) {
                        jitter *= 10.0;
                    } else {
                        return Err(CoreError::FactorizationFailed { final_jitter: jitter });
                    }
                }
            }
        };
        let y = DVector::from_iterator(r, data.outputs.iter().copied());
        let weights = factor.solve(&y);
        Ok(Self {
            kernel,
            data,
            factor: Some(factor),
            weights,
            jitter,
            clamp_count: AtomicU64::new(0),
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn data(&self) -> &GpData {
        &self.data
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// Jitter that was actually added to the diagonal during fitting.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Number of times predictive variance had to be clamped at zero.
    pub fn clamp_count(&self) -> u64 {
        self.clamp_count.load(Ordering::Relaxed)
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    fn cross_covariances(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.data.len(),
            self.data.inputs.iter().map(|xi| self.kernel.eval_raw(xi, x)),
        )
    }

    /// Posterior mean and variance at `x`. Variance is clamped at zero.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64), CoreError> {
        if x.len() != self.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let prior_var = self.kernel.eval_raw(x, x);
        let Some(factor) = &self.factor else {
            return Ok((0.0, prior_var));
        };
        let kvec = self.cross_covariances(x);
        let mean = kvec.dot(&self.weights);
        let solved = factor.solve(&kvec);
        let mut var = prior_var - kvec.dot(&solved);
        if var < 0.0 {
            self.clamp_count.fetch_add(1, Ordering::Relaxed);
            var = 0.0;
        }
        Ok((mean, var))
    }

    /// Lower and upper confidence bounds `(mu - beta sigma, mu + beta sigma)`.
    pub fn bounds(&self, x: &[f64], band: ConfidenceBand) -> Result<(f64, f64), CoreError> {
        let (mean, var) = self.predict(x)?;
        let half = band.beta * var.sqrt();
        Ok((mean - half, mean + half))
    }

    /// Return the posterior obtained by appending `(x, value)` as one more
    /// observation with the same noise variance. Used both for real
    /// measurements and for the optimistic virtual observations of the
    /// expander test.
    pub fn with_observation(&self, x: &[f64], value: f64) -> Result<Self, CoreError> {
        if x.len() != self.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mut data = self.data.clone();
        data.inputs.push(x.to_vec());
        data.outputs.push(value);
        Self::fit(self.kernel.clone(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn kernel2d() -> KernelSpec {
        KernelSpec::squared_exponential(vec![1.0, 1.0], 1.0).unwrap()
    }

    #[test]
    fn kernel_at_identical_points_is_signal_variance() {
        let k = kernel2d();
        assert_eq!(k.eval(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn kernel_closed_form() {
        let k = kernel2d();
        let v = k.eval(&[0.0, 0.0], &[2.0, 0.0]).unwrap();
        assert_relative_eq!(v, (-2.0f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn kernel_is_symmetric() {
        let k = KernelSpec::squared_exponential(vec![0.7, 1.3], 2.5).unwrap();
        let a = [0.3, -0.8];
        let b = [-1.1, 0.4];
        assert_eq!(k.eval(&a, &b).unwrap(), k.eval(&b, &a).unwrap());
    }

    #[test]
    fn kernel_dimension_mismatch() {
        let k = kernel2d();
        assert!(matches!(
            k.eval(&[0.0], &[0.0, 0.0]),
            Err(CoreError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn kernel_validation() {
        assert!(KernelSpec::squared_exponential(vec![1.0, -1.0], 1.0).is_err());
        assert!(KernelSpec::squared_exponential(vec![1.0], 0.0).is_err());
    }

    #[test]
    fn empty_fit_gives_prior() {
        let post = GpPosterior::fit(kernel2d(), GpData::empty(0.01)).unwrap();
        let (m, v) = post.predict(&[0.4, -0.9]).unwrap();
        assert_eq!(m, 0.0);
        assert_relative_eq!(v, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn noise_free_interpolation() {
        let k = KernelSpec::squared_exponential(vec![1.0], 1.0).unwrap();
        let data = GpData::new(vec![vec![0.5]], vec![3.0], 0.0).unwrap();
        let post = GpPosterior::fit(k, data).unwrap();
        let (m, v) = post.predict(&[0.5]).unwrap();
        assert_relative_eq!(m, 3.0, max_relative = 1e-10);
        assert!(v.abs() < 1e-10);
    }

    #[test]
    fn prior_bounds_at_beta_two() {
        let post = GpPosterior::fit(kernel2d(), GpData::empty(0.0)).unwrap();
        let band = ConfidenceBand::new(2.0).unwrap();
        let (l, u) = post.bounds(&[0.0, 0.0], band).unwrap();
        assert_relative_eq!(l, -2.0, max_relative = 1e-12);
        assert_relative_eq!(u, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn bounds_midpoint_is_mean() {
        let k = KernelSpec::squared_exponential(vec![0.8], 1.5).unwrap();
        let data = GpData::new(
            vec![vec![-0.5], vec![0.1], vec![0.9]],
            vec![0.3, -0.2, 1.1],
            0.01,
        )
        .unwrap();
        let post = GpPosterior::fit(k, data).unwrap();
        let band = ConfidenceBand::new(3.0).unwrap();
        let (m, _) = post.predict(&[0.4]).unwrap();
        let (l, u) = post.bounds(&[0.4], band).unwrap();
        assert_relative_eq!((l + u) / 2.0, m, epsilon = 1e-12);
        assert!(l <= m && m <= u);
    }

    #[test]
    fn weights_match_direct_inversion() {
        let k = KernelSpec::squared_exponential(vec![0.6], 1.2).unwrap();
        let inputs = vec![vec![-0.7], vec![0.2], vec![0.8]];
        let outputs = vec![0.5, -1.0, 0.3];
        let noise = 0.05;
        let post = GpPosterior::fit(k.clone(), GpData::new(inputs.clone(), outputs.clone(), noise).unwrap()).unwrap();

        // independent dense solve
        let r = inputs.len();
        let mut km = DMatrix::zeros(r, r);
        for i in 0..r {
            for j in 0..r {
                km[(i, j)] = k.eval(&inputs[i], &inputs[j]).unwrap();
            }
            km[(i, i)] += noise;
        }
        let y = DVector::from_vec(outputs);
        let w = km.lu().solve(&y).unwrap();
        for i in 0..r {
            assert_relative_eq!(post.weights()[i], w[i], max_relative = 1e-10);
        }
    }

    #[test]
    fn appended_observation_equals_refit() {
        let k = KernelSpec::squared_exponential(vec![0.9], 1.0).unwrap();
        let data = GpData::new(vec![vec![-0.4], vec![0.6]], vec![0.2, -0.5], 0.01).unwrap();
        let post = GpPosterior::fit(k.clone(), data.clone()).unwrap();
        let appended = post.with_observation(&[0.1], 0.7).unwrap();

        let mut data2 = data;
        data2.inputs.push(vec![0.1]);
        data2.outputs.push(0.7);
        let refit = GpPosterior::fit(k, data2).unwrap();
        for q in [-1.0, -0.3, 0.05, 0.4, 1.2] {
            let (m1, v1) = appended.predict(&[q]).unwrap();
            let (m2, v2) = refit.predict(&[q]).unwrap();
            assert_relative_eq!(m1, m2, epsilon = 1e-10);
            assert_relative_eq!(v1, v2, epsilon = 1e-10);
        }
    }

    #[test]
    fn virtual_observation_at_datum_mean_is_value() {
        let k = KernelSpec::squared_exponential(vec![1.0], 1.0).unwrap();
        let post = GpPosterior::fit(k, GpData::empty(0.0)).unwrap();
        let appended = post.with_observation(&[0.3], 2.0).unwrap();
        let (m, _) = appended.predict(&[0.3]).unwrap();
        assert_relative_eq!(m, 2.0, max_relative = 1e-10);
    }

    #[test]
    fn duplicate_noise_free_datum_leaves_predictions_unchanged() {
        let k = KernelSpec::squared_exponential(vec![0.8], 1.0).unwrap();
        let data = GpData::new(vec![vec![-0.2], vec![0.5]], vec![0.4, -0.1], 0.0).unwrap();
        let post = GpPosterior::fit(k, data).unwrap();
        let dup = post.with_observation(&[0.5], -0.1).unwrap();
        for q in [-0.8, -0.2, 0.0, 0.3, 0.5, 0.9] {
            let (m1, v1) = post.predict(&[q]).unwrap();
            let (m2, v2) = dup.predict(&[q]).unwrap();
            assert_relative_eq!(m1, m2, epsilon = 1e-8);
            assert_relative_eq!(v1, v2, epsilon = 1e-8);
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let k = KernelSpec::squared_exponential(vec![0.5, 1.5], 2.0).unwrap();
        let data = GpData::new(
            vec![vec![0.1, 0.2], vec![-0.3, 0.7], vec![0.9, -0.4]],
            vec![1.0, -0.5, 0.2],
            0.02,
        )
        .unwrap();
        let a = GpPosterior::fit(k.clone(), data.clone()).unwrap();
        let b = GpPosterior::fit(k, data).unwrap();
        assert_eq!(a.weights(), b.weights());
    }
}
