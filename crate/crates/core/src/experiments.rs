//! The benchmark problems: a Brownian motion conditioned on an unlikely
//! endpoint, long Brownian observation series, and a partially observed
//! five-unit rate network.
//!
//! Synthetic data are simulated from the model itself with a seeded
//! generator, so a seed names a dataset.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{
    fill_noise, BrownianMotion, DiffusionModel, GaussianObservationModel, InitialStateDistribution, NeuralNetwork,
    NeuralParams, Observation, ObservationSeries, Stepper, TimeGrid,
};
use crate::problem::SmoothingProblem;
use crate::rng::seeded_rng;

/// A problem with simulated data and the trajectory that generated it.
#[derive(Debug, Clone)]
pub struct Simulated<M> {
    pub problem: SmoothingProblem<M>,
    /// Time-major ground-truth path, `(L + 1) × n`.
    pub truth: Vec<f64>,
}

/// Draws `X_0` from `prior` and integrates the uncontrolled dynamics over `grid`.
pub fn simulate_path<M: DiffusionModel, R: Rng + ?Sized>(
    model: &M,
    grid: &TimeGrid,
    prior: &InitialStateDistribution,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = model.state_dim();
    let m = model.noise_dim();
    let mut path = vec![0.0; grid.num_points() * n];
    prior.sample_into(rng, &mut path[..n]);
    let mut stepper = Stepper::new(n, m);
    let zero = vec![0.0; m];
    let mut dw = vec![0.0; m];
    for k in 0..grid.num_steps() {
        fill_noise(rng, grid.dt(), &mut dw);
        let (head, tail) = path.split_at_mut((k + 1) * n);
        stepper.step_into(model, &head[k * n..], grid.time(k), &zero, &dw, grid.dt(), &mut tail[..n])?;
    }
    Ok(path)
}

/// Noisy readings of `path` at the grid indices `indices`.
pub fn observe_path<R: Rng + ?Sized>(
    obs_model: &GaussianObservationModel,
    grid: &TimeGrid,
    path: &[f64],
    state_dim: usize,
    indices: &[usize],
    rng: &mut R,
) -> Result<ObservationSeries> {
    let entries = indices
        .iter()
        .map(|&k| {
            let x = &path[k * state_dim..(k + 1) * state_dim];
            let value = obs_model
                .observed()
                .iter()
                .zip(obs_model.variance())
                .map(|(&i, v)| {
                    let z: f64 = rng.sample(StandardNormal);
                    x[i] + v.sqrt() * z
                })
                .collect();
            Observation { index: k, value }
        })
        .collect();
    ObservationSeries::new(grid, entries)
}

/// Standard Brownian motion on `[0, 1]` with `dt = 0.01`, prior `N(0, 4)`
/// and unit-variance observations `y_0 = 0`, `y_1 = y_final`.
pub fn lq_unlikely(y_final: f64) -> Result<SmoothingProblem<BrownianMotion>> {
    let grid = TimeGrid::new(0.01, 100)?;
    let obs = ObservationSeries::new(
        &grid,
        vec![
            Observation { index: 0, value: vec![0.0] },
            Observation { index: 100, value: vec![y_final] },
        ],
    )?;
    SmoothingProblem::new(
        BrownianMotion::new(1.0),
        grid,
        GaussianObservationModel::scalar(1.0)?,
        obs,
        InitialStateDistribution::gaussian(vec![0.0], vec![4.0])?,
    )
}

/// A Brownian motion with `σ² = 0.75` observed with noise variance `0.9` at
/// evenly spaced times, prior `N(0, 4)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqLong {
    pub dt: f64,
    /// Integration steps between observations.
    pub obs_every: usize,
    /// Observations in the full series.
    pub total_obs: usize,
}

impl LqLong {
    /// 300 observations on `[0, 3]`, one per step of `dt = 0.01`.
    pub const STANDARD: LqLong = LqLong { dt: 0.01, obs_every: 1, total_obs: 300 };
    /// 1000 observations on `[0, 3]` with `dt = 0.001`.
    pub const DENSE: LqLong = LqLong { dt: 0.001, obs_every: 3, total_obs: 1000 };

    pub const SIGMA2: f64 = 0.75;
    pub const OBS_VAR: f64 = 0.9;

    /// The full series simulated with `seed`, conditioned on its first `keep`
    /// observations. The grid ends at the last kept observation.
    pub fn problem(&self, keep: usize, seed: u64) -> Result<Simulated<BrownianMotion>> {
        if keep == 0 || keep > self.total_obs {
            return Err(Error::invalid(format!("cannot keep {keep} of {} observations", self.total_obs)));
        }
        let model = BrownianMotion::new(Self::SIGMA2.sqrt());
        let prior = InitialStateDistribution::gaussian(vec![0.0], vec![4.0])?;
        let obs_model = GaussianObservationModel::scalar(Self::OBS_VAR)?;
        let grid = TimeGrid::new(self.dt, self.total_obs * self.obs_every)?;

        let mut rng = seeded_rng(seed);
        let path = simulate_path(&model, &grid, &prior, &mut rng)?;
        let indices: Vec<usize> = (1..=self.total_obs).map(|j| j * self.obs_every).collect();
        let series = observe_path(&obs_model, &grid, &path, 1, &indices, &mut rng)?;

        let (grid, observations) = series.truncated(&grid, keep)?;
        let truth = path[..grid.num_points()].to_vec();
        let problem = SmoothingProblem::new(model, grid, obs_model, observations, prior)?;
        Ok(Simulated { problem, truth })
    }
}

/// Initial condition of the network experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuralPrior {
    /// `X_0 = 0`.
    Fixed,
    /// `X_0 ~ N(0, I)`.
    Gaussian,
}

/// The five-unit network with `σ² = 0.05` and `dt = 0.01`; unit 0 is read
/// with noise `σ_obs = 0.1` every ten steps, `num_obs` times.
///
/// The network parameters and the data are both drawn from `seed`.
pub fn neural5(num_obs: usize, prior: NeuralPrior, seed: u64) -> Result<(Simulated<NeuralNetwork>, NeuralParams)> {
    const DIM: usize = 5;
    const EVERY: usize = 10;
    if num_obs == 0 {
        return Err(Error::invalid("need at least one observation"));
    }
    let mut rng = seeded_rng(seed);
    let params = NeuralParams::sample(&mut rng, DIM);
    let model = NeuralNetwork::new(&params, 0.05f64.sqrt())?;
    let prior = match prior {
        NeuralPrior::Fixed => InitialStateDistribution::delta(vec![0.0; DIM]),
        NeuralPrior::Gaussian => InitialStateDistribution::gaussian(vec![0.0; DIM], vec![1.0; DIM])?,
    };
    let obs_model = GaussianObservationModel::new(vec![0], vec![0.01])?;
    let grid = TimeGrid::new(0.01, num_obs * EVERY)?;

    let truth = simulate_path(&model, &grid, &prior, &mut rng)?;
    let indices: Vec<usize> = (1..=num_obs).map(|j| j * EVERY).collect();
    let observations = observe_path(&obs_model, &grid, &truth, DIM, &indices, &mut rng)?;
    let problem = SmoothingProblem::new(model, grid, obs_model, observations, prior)?;
    Ok((Simulated { problem, truth }, params))
}
