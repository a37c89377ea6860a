//! Diffusion models, the integration grid and the Euler–Maruyama kernel.
//!
//! A latent process follows `dX = F(X,t) dt + σ(X,t) [u(X,t) dt + dW]`, where
//! `u` is an optional importance-sampling control (zero for the prior
//! dynamics). Everything in the crate is discretised on a uniform
//! [`TimeGrid`]; observations sit exactly on grid points.

mod brownian;
mod neural;
mod observation;
mod prior;

pub use brownian::BrownianMotion;
pub use neural::{NeuralNetwork, NeuralParams};
pub use observation::{log_obs_likelihood, GaussianObservationModel, Observation, ObservationSeries};
pub use prior::InitialStateDistribution;
pub(crate) use prior::diag_gaussian_logpdf;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Default cap on the condition number of `σσ'` before the backward kernel is
/// declared singular.
pub const DEFAULT_CONDITION_CAP: f64 = 1e12;

/// Uniform time discretisation `t_k = k·dt`, `k = 0..=L`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeGrid {
    dt: f64,
    num_steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, num_steps: usize) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        if num_steps == 0 {
            return Err(Error::invalid("time grid needs at least one step"));
        }
        Ok(TimeGrid { dt, num_steps })
    }

    /// Grid with `L = T/dt` steps; fails unless `T` is an integer multiple of `dt`.
    pub fn from_horizon(horizon: f64, dt: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        let steps = (horizon / dt).round();
        if steps < 1.0 || (steps * dt - horizon).abs() > 1e-12 * horizon {
            return Err(Error::invalid(format!(
                "horizon {horizon} is not a multiple of dt = {dt}"
            )));
        }
        TimeGrid::new(dt, steps as usize)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of integration steps `L`.
    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    /// Number of grid points, `L + 1`.
    pub fn num_points(&self) -> usize {
        self.num_steps + 1
    }

    pub fn horizon(&self) -> f64 {
        self.num_steps as f64 * self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Grid index of `t`, if `t` lies on the grid (to within `1e-9·dt`).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = (t / self.dt).round();
        if k < 0.0 || k > self.num_steps as f64 {
            return None;
        }
        ((t - k * self.dt).abs() <= 1e-9 * self.dt).then_some(k as usize)
    }

    /// Same `dt`, truncated to `num_steps` steps.
    pub fn truncated(&self, num_steps: usize) -> Result<Self> {
        TimeGrid::new(self.dt, num_steps)
    }
}

/// Drift and diffusion of an Itô SDE with `n` states and `m` noise channels.
///
/// Implementations must be pure: the smoothers call them concurrently from
/// many workers.
pub trait DiffusionModel: Send + Sync {
    fn state_dim(&self) -> usize;

    fn noise_dim(&self) -> usize;

    /// Writes `F(x, t)` into `out` (length `n`).
    fn drift(&self, x: &[f64], t: f64, out: &mut [f64]);

    /// Writes `σ(x, t)` into `out` as a row-major `n × m` matrix.
    fn diffusion(&self, x: &[f64], t: f64, out: &mut [f64]);

    fn name(&self) -> &str {
        "custom"
    }
}

impl<M: DiffusionModel + ?Sized> DiffusionModel for &M {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn noise_dim(&self) -> usize {
        (**self).noise_dim()
    }
    fn drift(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (**self).drift(x, t, out)
    }
    fn diffusion(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (**self).diffusion(x, t, out)
    }
    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<M: DiffusionModel + ?Sized> DiffusionModel for Box<M> {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn noise_dim(&self) -> usize {
        (**self).noise_dim()
    }
    fn drift(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (**self).drift(x, t, out)
    }
    fn diffusion(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (**self).diffusion(x, t, out)
    }
    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Reusable scratch space for repeated Euler–Maruyama steps.
#[derive(Debug, Clone)]
pub struct Stepper {
    drift: Vec<f64>,
    diffusion: Vec<f64>,
    kick: Vec<f64>,
}

impl Stepper {
    pub fn new(state_dim: usize, noise_dim: usize) -> Self {
        Stepper {
            drift: vec![0.0; state_dim],
            diffusion: vec![0.0; state_dim * noise_dim],
            kick: vec![0.0; noise_dim],
        }
    }

    /// `out = x + F(x,t)·dt + σ(x,t)·(u·dt + dW)`.
    #[allow(clippy::too_many_arguments)]
    pub fn step_into<M: DiffusionModel + ?Sized>(
        &mut self,
        model: &M,
        x: &[f64],
        t: f64,
        u: &[f64],
        dw: &[f64],
        dt: f64,
        out: &mut [f64],
    ) -> Result<()> {
        let n = model.state_dim();
        let m = model.noise_dim();
        debug_assert_eq!(x.len(), n);
        debug_assert_eq!(out.len(), n);
        model.drift(x, t, &mut self.drift);
        if self.drift.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical { what: "drift", particle: None, step: None });
        }
        model.diffusion(x, t, &mut self.diffusion);
        if self.diffusion.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical { what: "diffusion", particle: None, step: None });
        }
        for j in 0..m {
            self.kick[j] = u[j] * dt + dw[j];
        }
        for i in 0..n {
            let row = &self.diffusion[i * m..(i + 1) * m];
            let noise: f64 = row.iter().zip(&self.kick).map(|(s, k)| s * k).sum();
            out[i] = x[i] + self.drift[i] * dt + noise;
        }
        Ok(())
    }
}

/// One Euler–Maruyama step of the controlled dynamics. With `u = 0` this is
/// the prior kernel.
pub fn step_euler_maruyama<M: DiffusionModel + ?Sized>(
    model: &M,
    x: &[f64],
    t: f64,
    u: &[f64],
    dw: &[f64],
    dt: f64,
) -> Result<Vec<f64>> {
    if x.len() != model.state_dim() || u.len() != model.noise_dim() || dw.len() != model.noise_dim() {
        return Err(Error::invalid("state/control/noise dimensions do not match the model"));
    }
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::invalid("dt must be positive"));
    }
    let mut out = vec![0.0; x.len()];
    Stepper::new(model.state_dim(), model.noise_dim()).step_into(model, x, t, u, dw, dt, &mut out)?;
    Ok(out)
}

/// Fills `out` with i.i.d. `N(0, dt)` increments.
pub fn fill_noise<R: Rng + ?Sized>(rng: &mut R, dt: f64, out: &mut [f64]) {
    let scale = dt.sqrt();
    for v in out {
        let z: f64 = rng.sample(StandardNormal);
        *v = scale * z;
    }
}

/// An `m`-vector of independent Brownian increments over `dt`.
pub fn sample_noise<R: Rng + ?Sized>(rng: &mut R, m: usize, dt: f64) -> Vec<f64> {
    let mut out = vec![0.0; m];
    fill_noise(rng, dt, &mut out);
    out
}

/// The Gaussian one-step transition `N(x + F dt, σσ' dt)` of the uncontrolled
/// discretised dynamics, factored for repeated evaluation.
#[derive(Debug, Clone)]
pub struct TransitionKernel {
    mean: Vec<f64>,
    /// Inverse of the lower Cholesky factor, row-major.
    chol_inv: Vec<f64>,
    log_norm: f64,
}

impl TransitionKernel {
    pub fn new<M: DiffusionModel + ?Sized>(
        model: &M,
        x: &[f64],
        t: f64,
        dt: f64,
        condition_cap: f64,
    ) -> Result<Self> {
        let n = model.state_dim();
        let m = model.noise_dim();
        let mut drift = vec![0.0; n];
        let mut sigma = vec![0.0; n * m];
        model.drift(x, t, &mut drift);
        model.diffusion(x, t, &mut sigma);
        if drift.iter().chain(&sigma).any(|v| !v.is_finite()) {
            return Err(Error::Numerical { what: "transition kernel", particle: None, step: None });
        }
        let mean: Vec<f64> = x.iter().zip(&drift).map(|(xi, fi)| xi + fi * dt).collect();
        let s = DMatrix::from_row_slice(n, m, &sigma);
        let cov = &s * s.transpose() * dt;

        let eig = SymmetricEigen::new(cov.clone());
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        if condition.is_nan() || condition > condition_cap {
            return Err(Error::SingularDiffusion { step: None, condition });
        }
        let chol = cov
            .cholesky()
            .ok_or(Error::SingularDiffusion { step: None, condition })?;
        let l = chol.l();
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let l_inv = l
            .try_inverse()
            .ok_or(Error::SingularDiffusion { step: None, condition })?;
        let mut chol_inv = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                chol_inv[i * n + j] = l_inv[(i, j)];
            }
        }
        let log_norm = -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(TransitionKernel { mean, chol_inv, log_norm })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Inverse of the lower Cholesky factor of the covariance, row-major.
    pub fn chol_inv(&self) -> &[f64] {
        &self.chol_inv
    }

    /// `-½ (n log 2π + log det Σ)`.
    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    pub fn log_density(&self, x_next: &[f64]) -> f64 {
        let n = self.mean.len();
        let mut quad = 0.0;
        for i in 0..n {
            let row = &self.chol_inv[i * n..i * n + i + 1];
            let z: f64 = row
                .iter()
                .zip(x_next.iter().zip(&self.mean))
                .map(|(l, (a, b))| l * (a - b))
                .sum();
            quad += z * z;
        }
        self.log_norm - 0.5 * quad
    }
}

/// `log N(x_next | x + F(x,t) dt, σσ' dt)`.
pub fn gaussian_transition_logdensity<M: DiffusionModel + ?Sized>(
    model: &M,
    x_next: &[f64],
    x: &[f64],
    t: f64,
    dt: f64,
) -> Result<f64> {
    Ok(TransitionKernel::new(model, x, t, dt, DEFAULT_CONDITION_CAP)?.log_density(x_next))
}
