use crate::error::{Error, Result};
use crate::model::{DiffusionModel, GaussianObservationModel, InitialStateDistribution, ObservationSeries, TimeGrid};

/// Everything that defines a smoothing problem: prior dynamics, the grid,
/// the observation model, the data and the initial-state prior.
#[derive(Debug, Clone)]
pub struct SmoothingProblem<M> {
    pub model: M,
    pub grid: TimeGrid,
    pub obs_model: GaussianObservationModel,
    pub observations: ObservationSeries,
    pub prior: InitialStateDistribution,
}

impl<M: DiffusionModel> SmoothingProblem<M> {
    pub fn new(
        model: M,
        grid: TimeGrid,
        obs_model: GaussianObservationModel,
        observations: ObservationSeries,
        prior: InitialStateDistribution,
    ) -> Result<Self> {
        let n = model.state_dim();
        if n == 0 || model.noise_dim() == 0 {
            return Err(Error::invalid("model must have at least one state and one noise channel"));
        }
        if prior.dim() != n {
            return Err(Error::invalid(format!(
                "prior has dimension {}, model state has {n}",
                prior.dim()
            )));
        }
        if let Some(&bad) = obs_model.observed().iter().find(|&&i| i >= n) {
            return Err(Error::invalid(format!("observed coordinate {bad} out of range for {n} states")));
        }
        observations.check_against(&grid, &obs_model)?;
        Ok(SmoothingProblem { model, grid, obs_model, observations, prior })
    }

    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.model.noise_dim()
    }

    /// `log g(y_k | x)` if there is an observation at grid index `k`.
    #[inline]
    pub fn log_likelihood_at(&self, k: usize, x: &[f64]) -> Option<f64> {
        self.observations.at(k).map(|y| self.obs_model.log_likelihood(y, x))
    }
}
