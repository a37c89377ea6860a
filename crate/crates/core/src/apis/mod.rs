//! The adaptive path integral smoother.
//!
//! Each iteration simulates `N` trajectories under the current control law,
//! weights them by their path cost and uses the weighted system to
//!
//! 1. refit the Gaussian proposal for the initial state,
//! 2. restandardise the feedback basis against the new posterior marginals,
//! 3. move the controller parameters towards the optimal control.
//!
//! When the weights are too degenerate to estimate anything, the costs are
//! tempered (`S → S/λ`) until the ESS reaches the annealing threshold. The
//! tempered weights feed the estimators only; reported ESS values and the
//! stopping rule use the untempered weights.

mod particles;
mod rollout;
mod weights;

pub use particles::{weighted_marginals, ParticleSystem};
pub use rollout::rollout;
pub use weights::{
    anneal, anneal_capped, compute_tempered_weights, compute_weights, ess, weight_variance, Annealing,
    DEFAULT_ANNEAL_CAP,
};

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::controller::{
    accumulate_all_stats, update_controller_capped, update_standardization, LinearFeedbackController,
    StandardizationStats, StandardizedControl, DEFAULT_INVERSION_CAP, DEFAULT_RIDGE, DEFAULT_VAR_FLOOR,
};
use crate::error::{Error, Result};
use crate::model::{DiffusionModel, InitialStateDistribution};
use crate::problem::SmoothingProblem;

/// Axis-aligned Gaussian proposal `q(X_0)` for the initial state.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InitialProposal {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl InitialProposal {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() || var.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("proposal needs matching mean/variance with positive variances"));
        }
        Ok(InitialProposal { mean, var })
    }

    /// The proposal equal to a Gaussian prior.
    pub fn from_prior(prior: &InitialStateDistribution) -> Option<Self> {
        match prior {
            InitialStateDistribution::Gaussian { mean, var } => Some(InitialProposal {
                mean: mean.clone(),
                var: var.clone(),
            }),
            InitialStateDistribution::Delta { .. } => None,
        }
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for ((o, m), v) in out.iter_mut().zip(&self.mean).zip(&self.var) {
            let z: f64 = rng.sample(StandardNormal);
            *o = m + v.sqrt() * z;
        }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        crate::model::diag_gaussian_logpdf(x, &self.mean, &self.var)
    }
}

/// Weighted mean and per-coordinate variance of the initial states, with the
/// variance floored at `var_floor`.
pub fn update_initial_proposal(particles: &ParticleSystem, weights: &[f64], var_floor: f64) -> InitialProposal {
    let (mean, var) = weighted_marginals(particles, weights, 0);
    let var = var.into_iter().map(|v| v.max(var_floor)).collect();
    InitialProposal { mean, var }
}

/// When to stop adapting.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StopRule {
    /// Stop once the raw ESS reaches the configured threshold.
    EssThreshold,
    /// Stop once the raw ESS moved by less than `tol` over the last `window` iterations.
    Plateau { tol: f64, window: usize },
}

/// Hyperparameters of the adaptive smoother.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ApisConfig {
    pub particles: usize,
    /// Learning rate `η ∈ (0, 1)`.
    pub eta: f64,
    /// Number of controller updates; `max_iters + 1` rollouts at most.
    pub max_iters: usize,
    /// Raw-ESS stopping threshold `θ ∈ (0, 1]`.
    pub ess_threshold: f64,
    /// Annealing factor `β > 1`.
    pub anneal_factor: f64,
    /// Annealing threshold `γ ∈ [0, 1)`; zero disables annealing.
    pub anneal_threshold: f64,
    pub seed: u64,
    pub ridge: f64,
    pub var_floor: f64,
    pub anneal_cap: u32,
    pub inversion_cap: f64,
    /// Forward window (in steps) of the noise statistics; 1 is the per-step estimator.
    pub window: usize,
    pub stop_rule: StopRule,
}

impl Default for ApisConfig {
    fn default() -> Self {
        ApisConfig {
            particles: 1000,
            eta: 0.05,
            max_iters: 100,
            ess_threshold: 1.0,
            anneal_factor: 1.15,
            anneal_threshold: 0.0,
            seed: 0,
            ridge: DEFAULT_RIDGE,
            var_floor: DEFAULT_VAR_FLOOR,
            anneal_cap: DEFAULT_ANNEAL_CAP,
            inversion_cap: DEFAULT_INVERSION_CAP,
            window: 1,
            stop_rule: StopRule::EssThreshold,
        }
    }
}

impl ApisConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::InvalidInput(msg)) };
        check(self.particles >= 1, "particles must be at least 1".into())?;
        check(self.eta > 0.0 && self.eta < 1.0, format!("eta must lie in (0, 1), got {}", self.eta))?;
        check(
            self.ess_threshold > 0.0 && self.ess_threshold <= 1.0,
            format!("ess_threshold must lie in (0, 1], got {}", self.ess_threshold),
        )?;
        check(
            self.anneal_factor > 1.0 && self.anneal_factor.is_finite(),
            format!("anneal_factor must exceed 1, got {}", self.anneal_factor),
        )?;
        check(
            (0.0..1.0).contains(&self.anneal_threshold),
            format!("anneal_threshold must lie in [0, 1), got {}", self.anneal_threshold),
        )?;
        check(self.ridge >= 0.0, "ridge must be non-negative".into())?;
        check(self.var_floor > 0.0, "var_floor must be positive".into())?;
        check(self.window >= 1, "window must be at least 1".into())?;
        if let StopRule::Plateau { tol, window } = self.stop_rule {
            check(tol > 0.0 && window >= 1, "plateau rule needs tol > 0 and window >= 1".into())?;
        }
        Ok(())
    }
}

/// One row of the per-iteration diagnostics.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub raw_ess: f64,
    pub annealed_ess: f64,
    pub lambda: f64,
    pub weight_variance: f64,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiagnosticsTrace {
    pub records: Vec<IterationRecord>,
}

impl DiagnosticsTrace {
    pub fn final_raw_ess(&self) -> Option<f64> {
        self.records.last().map(|r| r.raw_ess)
    }

    pub fn raw_ess(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.raw_ess).collect()
    }

    fn plateaued(&self, tol: f64, window: usize) -> bool {
        if self.records.len() <= window {
            return false;
        }
        let tail = &self.records[self.records.len() - window - 1..];
        let (lo, hi) = tail
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.raw_ess), hi.max(r.raw_ess)));
        hi - lo < tol
    }
}

/// Starting point of the adaptation; the default is `u ≡ 0` and `q = p₀`.
#[derive(Debug, Clone, Default)]
pub struct ApisInit {
    pub controller: Option<(LinearFeedbackController, StandardizationStats)>,
    pub proposal: Option<InitialProposal>,
}

#[derive(Debug, Clone)]
pub struct ApisOutput {
    /// Final particle system, weighted with the untempered weights.
    pub particles: ParticleSystem,
    pub controller: LinearFeedbackController,
    pub standardization: StandardizationStats,
    /// Proposal used for the final rollout (`None` means the prior was used).
    pub proposal: Option<InitialProposal>,
    pub trace: DiagnosticsTrace,
}

impl ApisOutput {
    pub fn marginals(&self) -> crate::metrics::Marginals {
        crate::metrics::Marginals::from_particles(&self.particles, self.particles.weights())
    }
}

/// Runs the adaptive smoother from `u ≡ 0`.
pub fn run_apis<M: DiffusionModel>(problem: &SmoothingProblem<M>, cfg: &ApisConfig) -> Result<ApisOutput> {
    run_apis_from(problem, cfg, ApisInit::default())
}

/// Runs the adaptive smoother from a given controller and proposal.
pub fn run_apis_from<M: DiffusionModel>(
    problem: &SmoothingProblem<M>,
    cfg: &ApisConfig,
    init: ApisInit,
) -> Result<ApisOutput> {
    run_apis_observed(problem, cfg, init, |_| {})
}

/// [`run_apis_from`], calling `on_iteration` with each finished record.
pub fn run_apis_observed<M: DiffusionModel>(
    problem: &SmoothingProblem<M>,
    cfg: &ApisConfig,
    init: ApisInit,
    mut on_iteration: impl FnMut(&IterationRecord),
) -> Result<ApisOutput> {
    cfg.validate()?;
    let n = problem.state_dim();
    let m = problem.noise_dim();
    let steps = problem.grid.num_steps();
    let dt = problem.grid.dt();

    let (mut controller, mut standardization) = match init.controller {
        Some((c, s)) => {
            if c.num_steps() != steps || c.noise_dim() != m || c.state_dim() != n || s.num_points() < steps {
                return Err(Error::invalid("initial controller does not fit the problem"));
            }
            let mut s = s;
            if s.num_points() != steps + 1 {
                s = StandardizationStats::from_parts(
                    n,
                    (0..=steps).flat_map(|k| s.mu(k.min(steps - 1)).to_vec()).collect(),
                    (0..=steps).flat_map(|k| s.sigma(k.min(steps - 1)).to_vec()).collect(),
                )?;
            }
            (c, s)
        }
        None => (
            LinearFeedbackController::zeros(steps, m, n),
            StandardizationStats::identity(steps + 1, n),
        ),
    };
    let gaussian_prior = problem.prior.is_gaussian();
    let mut proposal = if gaussian_prior { init.proposal } else { None };

    let mut trace = DiagnosticsTrace::default();
    for iteration in 0.. {
        let started = Instant::now();
        let control = StandardizedControl { controller: &controller, stats: &standardization };
        let mut particles = rollout(problem, &control, proposal.as_ref(), cfg.particles, cfg.seed, iteration as u32)?;
        let raw = particles.weights().to_vec();
        let raw_ess = ess(&raw);
        let mut record = IterationRecord {
            iteration,
            raw_ess,
            annealed_ess: raw_ess,
            lambda: 1.0,
            weight_variance: weight_variance(&raw),
            wall_time_ms: 0.0,
        };

        let done = iteration >= cfg.max_iters
            || match cfg.stop_rule {
                StopRule::EssThreshold => raw_ess >= cfg.ess_threshold,
                StopRule::Plateau { tol, window } => {
                    let mut probe = trace.clone();
                    probe.records.push(record.clone());
                    probe.plateaued(tol, window)
                }
            };
        if done {
            record.wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
            on_iteration(&record);
            trace.records.push(record);
            particles.discard_noises();
            return Ok(ApisOutput { particles, controller, standardization, proposal, trace });
        }

        let annealed = anneal_capped(particles.costs(), cfg.anneal_threshold, cfg.anneal_factor, cfg.anneal_cap)?;
        record.annealed_ess = annealed.ess;
        record.lambda = annealed.lambda;
        let w = &annealed.weights;
        if gaussian_prior {
            proposal = Some(update_initial_proposal(&particles, w, cfg.var_floor));
        }
        let restandardized = update_standardization(&particles, w, cfg.var_floor);
        controller.rebase(&standardization, &restandardized);
        standardization = restandardized;
        let stats = accumulate_all_stats(&particles, w, &standardization, cfg.window);
        update_controller_capped(&mut controller, &stats, cfg.eta, dt, cfg.ridge, cfg.inversion_cap)?;
        if !controller.is_finite() {
            return Err(Error::Numerical { what: "controller parameters", particle: None, step: None });
        }

        record.wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
        on_iteration(&record);
        trace.records.push(record);
    }
    unreachable!()
}
