//! Estimators derived from weighted trajectories and their errors against a
//! reference solution.
//!
//! All arrays indexed by time are time-major with the state coordinate
//! varying fastest: entry `(k, i)` lives at `k * n + i`.

use crate::apis::ParticleSystem;
use crate::error::{Error, Result};

/// Per-grid-time posterior means and variances of every state coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    state_dim: usize,
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl Marginals {
    pub fn from_parts(state_dim: usize, mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if state_dim == 0 || mean.len() != var.len() || mean.len() % state_dim != 0 || mean.is_empty() {
            return Err(Error::invalid("marginal arrays do not match the state dimension"));
        }
        Ok(Marginals { state_dim, mean, var })
    }

    /// Weighted moments at every grid point.
    pub fn from_particles(particles: &ParticleSystem, weights: &[f64]) -> Self {
        let n = particles.state_dim();
        let points = particles.num_steps() + 1;
        let mut mean = vec![0.0; points * n];
        let mut var = vec![0.0; points * n];
        for (p, &w) in weights.iter().enumerate() {
            for (m, x) in mean.iter_mut().zip(particles.trajectory(p)) {
                *m += w * x;
            }
        }
        for (p, &w) in weights.iter().enumerate() {
            for ((v, x), m) in var.iter_mut().zip(particles.trajectory(p)).zip(&mean) {
                let d = x - m;
                *v += w * d * d;
            }
        }
        Marginals { state_dim: n, mean, var }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn num_points(&self) -> usize {
        self.mean.len() / self.state_dim
    }

    pub fn means(&self) -> &[f64] {
        &self.mean
    }

    pub fn variances(&self) -> &[f64] {
        &self.var
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.mean[k * self.state_dim..(k + 1) * self.state_dim]
    }

    pub fn var(&self, k: usize) -> &[f64] {
        &self.var[k * self.state_dim..(k + 1) * self.state_dim]
    }

    /// The marginals of one coordinate, as a one-dimensional table.
    pub fn coordinate(&self, i: usize) -> Marginals {
        let n = self.state_dim;
        Marginals {
            state_dim: 1,
            mean: self.mean.iter().skip(i).step_by(n).copied().collect(),
            var: self.var.iter().skip(i).step_by(n).copied().collect(),
        }
    }
}

/// Time average `(1/T) ∫ f dt` of grid values by the trapezoidal rule.
pub fn trapezoid_average(values: &[f64]) -> f64 {
    match values.len() {
        0 => f64::NAN,
        1 => values[0],
        len => {
            let inner: f64 = values[1..len - 1].iter().sum();
            (inner + 0.5 * (values[0] + values[len - 1])) / (len - 1) as f64
        }
    }
}

/// An error measure as a function of time.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorProfile {
    pub state_dim: usize,
    /// Error at each `(k, i)`.
    pub per_time: Vec<f64>,
    /// Trapezoidal time average of each coordinate's error.
    pub time_average: Vec<f64>,
}

impl ErrorProfile {
    /// Time average, further averaged over coordinates.
    pub fn overall(&self) -> f64 {
        self.time_average.iter().sum::<f64>() / self.time_average.len() as f64
    }

    fn from_per_time(state_dim: usize, per_time: Vec<f64>) -> Self {
        let time_average = (0..state_dim)
            .map(|i| {
                let column: Vec<f64> = per_time.iter().skip(i).step_by(state_dim).copied().collect();
                trapezoid_average(&column)
            })
            .collect();
        ErrorProfile { state_dim, per_time, time_average }
    }
}

fn check_runs(estimates: &[&[f64]], len: usize, state_dim: usize) -> Result<()> {
    if state_dim == 0 || len == 0 || len % state_dim != 0 {
        return Err(Error::invalid("reference length is not a multiple of the state dimension"));
    }
    if estimates.is_empty() {
        return Err(Error::invalid("no runs to evaluate"));
    }
    if let Some(bad) = estimates.iter().position(|e| e.len() != len) {
        return Err(Error::invalid(format!("run {bad} has {} values, expected {len}", estimates[bad].len())));
    }
    Ok(())
}

/// `(1/R) Σ_r (μ̂_r(t) − μ(t))²` per grid time, and its time average.
pub fn mse_vs_truth(estimates: &[&[f64]], truth: &[f64], state_dim: usize) -> Result<ErrorProfile> {
    check_runs(estimates, truth.len(), state_dim)?;
    let r = estimates.len() as f64;
    let per_time = truth
        .iter()
        .enumerate()
        .map(|(j, t)| estimates.iter().map(|e| (e[j] - t).powi(2)).sum::<f64>() / r)
        .collect();
    Ok(ErrorProfile::from_per_time(state_dim, per_time))
}

/// `(1/R) Σ_r |μ̂_r(t) − μ(t)|` per grid time, and its time average.
pub fn abs_error_vs_truth(estimates: &[&[f64]], truth: &[f64], state_dim: usize) -> Result<ErrorProfile> {
    check_runs(estimates, truth.len(), state_dim)?;
    let r = estimates.len() as f64;
    let per_time = truth
        .iter()
        .enumerate()
        .map(|(j, t)| estimates.iter().map(|e| (e[j] - t).abs()).sum::<f64>() / r)
        .collect();
    Ok(ErrorProfile::from_per_time(state_dim, per_time))
}

/// Spread of an estimator across independent runs.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossRunVariance {
    pub state_dim: usize,
    /// Unbiased sample variance across runs at each `(k, i)`, divided by the
    /// reference variance when one was supplied.
    pub per_time: Vec<f64>,
    /// Trapezoidal time average, averaged over coordinates.
    pub average: f64,
}

/// Unbiased across-run variance of `R ≥ 2` estimates; with `reference`
/// each entry is divided by the matching posterior variance.
pub fn cross_run_variance(
    estimates: &[&[f64]],
    state_dim: usize,
    reference: Option<&[f64]>,
) -> Result<CrossRunVariance> {
    if estimates.len() < 2 {
        return Err(Error::InsufficientRuns { runs: estimates.len() });
    }
    let len = estimates[0].len();
    check_runs(estimates, len, state_dim)?;
    if let Some(reference) = reference {
        if reference.len() != len {
            return Err(Error::invalid("reference variance has the wrong length"));
        }
    }
    let r = estimates.len() as f64;
    let per_time: Vec<f64> = (0..len)
        .map(|j| {
            let mean = estimates.iter().map(|e| e[j]).sum::<f64>() / r;
            let var = estimates.iter().map(|e| (e[j] - mean).powi(2)).sum::<f64>() / (r - 1.0);
            match reference {
                Some(reference) => var / reference[j],
                None => var,
            }
        })
        .collect();
    let profile = ErrorProfile::from_per_time(state_dim, per_time);
    let average = profile.overall();
    Ok(CrossRunVariance { state_dim, per_time: profile.per_time, average })
}
