use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Distribution of the initial state `X_0`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialStateDistribution {
    /// A known initial condition.
    Delta { state: Vec<f64> },
    /// Axis-aligned Gaussian.
    Gaussian { mean: Vec<f64>, var: Vec<f64> },
}

impl InitialStateDistribution {
    pub fn delta(state: Vec<f64>) -> Self {
        InitialStateDistribution::Delta { state }
    }

    pub fn gaussian(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() || mean.is_empty() {
            return Err(Error::invalid("prior mean and variance must have equal, non-zero length"));
        }
        if var.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("prior variances must be positive"));
        }
        Ok(InitialStateDistribution::Gaussian { mean, var })
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialStateDistribution::Delta { state } => state.len(),
            InitialStateDistribution::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, InitialStateDistribution::Gaussian { .. })
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            InitialStateDistribution::Delta { state } => out.copy_from_slice(state),
            InitialStateDistribution::Gaussian { mean, var } => {
                for ((o, m), v) in out.iter_mut().zip(mean).zip(var) {
                    let z: f64 = rng.sample(StandardNormal);
                    *o = m + v.sqrt() * z;
                }
            }
        }
    }

    /// Log density of a Gaussian prior; `None` for a point mass.
    pub fn log_density(&self, x: &[f64]) -> Option<f64> {
        match self {
            InitialStateDistribution::Delta { .. } => None,
            InitialStateDistribution::Gaussian { mean, var } => Some(diag_gaussian_logpdf(x, mean, var)),
        }
    }
}

pub(crate) fn diag_gaussian_logpdf(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(var)
        .map(|((xi, mi), vi)| {
            let d = xi - mi;
            -0.5 * ((2.0 * std::f64::consts::PI * vi).ln() + d * d / vi)
        })
        .sum()
}
