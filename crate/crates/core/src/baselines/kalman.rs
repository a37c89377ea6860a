use crate::error::{Error, Result};
use crate::metrics::Marginals;
use crate::model::{BrownianMotion, InitialStateDistribution, ObservationSeries, TimeGrid};
use crate::problem::SmoothingProblem;

/// Scalar linear-Gaussian model on the integration grid:
/// `x_{k+1} = x_k + c dt + N(0, q dt)`, `y = h x + N(0, r)`,
/// `x_0 ~ N(m_0, v_0)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinearGaussianSpec {
    pub drift: f64,
    pub dyn_var: f64,
    pub obs_gain: f64,
    pub obs_var: f64,
    pub prior_mean: f64,
    /// Zero for a known initial state.
    pub prior_var: f64,
}

impl LinearGaussianSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.drift, self.dyn_var, self.obs_gain, self.obs_var, self.prior_mean, self.prior_var]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.dyn_var <= 0.0 || self.obs_var <= 0.0 || self.prior_var < 0.0 {
            return Err(Error::invalid("linear-Gaussian spec needs finite values and positive variances"));
        }
        Ok(())
    }

    /// The spec of a scalar Brownian smoothing problem.
    pub fn from_problem(problem: &SmoothingProblem<BrownianMotion>) -> Result<Self> {
        if problem.obs_model.obs_dim() != 1 {
            return Err(Error::invalid("expected a scalar observation"));
        }
        let (prior_mean, prior_var) = match &problem.prior {
            InitialStateDistribution::Delta { state } => (state[0], 0.0),
            InitialStateDistribution::Gaussian { mean, var } => (mean[0], var[0]),
        };
        let spec = LinearGaussianSpec {
            drift: problem.model.drift,
            dyn_var: problem.model.sigma * problem.model.sigma,
            obs_gain: 1.0,
            obs_var: problem.obs_model.variance()[0],
            prior_mean,
            prior_var,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Filtering and smoothing moments at every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanOutput {
    pub filter_mean: Vec<f64>,
    pub filter_var: Vec<f64>,
    pub smooth_mean: Vec<f64>,
    pub smooth_var: Vec<f64>,
}

impl KalmanOutput {
    pub fn smoothed(&self) -> Marginals {
        Marginals::from_parts(1, self.smooth_mean.clone(), self.smooth_var.clone()).expect("consistent shapes")
    }

    pub fn filtered(&self) -> Marginals {
        Marginals::from_parts(1, self.filter_mean.clone(), self.filter_var.clone()).expect("consistent shapes")
    }
}

/// Exact Kalman filter and Rauch–Tung–Striebel smoother on the grid.
pub fn kalman_rts(spec: &LinearGaussianSpec, grid: &TimeGrid, obs: &ObservationSeries) -> Result<KalmanOutput> {
    spec.validate()?;
    if obs.obs_dim() != 1 {
        return Err(Error::invalid("the Kalman smoother handles scalar observations only"));
    }
    let points = grid.num_points();
    let dt = grid.dt();
    let mut pred_mean = vec![0.0; points];
    let mut pred_var = vec![0.0; points];
    let mut filter_mean = vec![0.0; points];
    let mut filter_var = vec![0.0; points];

    let (mut m, mut v) = (spec.prior_mean, spec.prior_var);
    for k in 0..points {
        if k > 0 {
            m += spec.drift * dt;
            v += spec.dyn_var * dt;
        }
        pred_mean[k] = m;
        pred_var[k] = v;
        if let Some(y) = obs.at(k) {
            let s = spec.obs_gain * spec.obs_gain * v + spec.obs_var;
            let gain = v * spec.obs_gain / s;
            m += gain * (y[0] - spec.obs_gain * m);
            v *= 1.0 - gain * spec.obs_gain;
        }
        filter_mean[k] = m;
        filter_var[k] = v;
    }

    let mut smooth_mean = filter_mean.clone();
    let mut smooth_var = filter_var.clone();
    for k in (0..points - 1).rev() {
        let g = filter_var[k] / pred_var[k + 1];
        smooth_mean[k] = filter_mean[k] + g * (smooth_mean[k + 1] - pred_mean[k + 1]);
        smooth_var[k] = filter_var[k] + g * g * (smooth_var[k + 1] - pred_var[k + 1]);
    }
    Ok(KalmanOutput { filter_mean, filter_var, smooth_mean, smooth_var })
}
