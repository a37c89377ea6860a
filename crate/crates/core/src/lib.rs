//! Continuous-time smoothing for diffusion processes observed at discrete
//! times.
//!
//! The main entry point is [`apis::run_apis`], an adaptive importance
//! sampler that learns a feedback control steering simulated trajectories
//! towards the posterior. The [`baselines`] module contains the bootstrap
//! filter-smoother, backward simulation and an exact Kalman/RTS smoother for
//! linear-Gaussian problems.
//!
//! ```
//! use pismooth::prelude::*;
//!
//! let grid = TimeGrid::new(0.01, 100).unwrap();
//! let obs = ObservationSeries::from_times(&grid, &[0.0, 1.0], vec![vec![0.0], vec![5.0]]).unwrap();
//! let problem = SmoothingProblem::new(
//!     BrownianMotion::new(1.0),
//!     grid,
//!     GaussianObservationModel::scalar(1.0).unwrap(),
//!     obs,
//!     InitialStateDistribution::gaussian(vec![0.0], vec![4.0]).unwrap(),
//! )
//! .unwrap();
//! let cfg = ApisConfig { particles: 500, eta: 0.2, max_iters: 5, seed: 1, ..ApisConfig::default() };
//! let out = run_apis(&problem, &cfg).unwrap();
//! assert_eq!(out.trace.records.len(), 6);
//! ```

#![allow(clippy::needless_range_loop)]

pub mod apis;
pub mod baselines;
pub mod controller;
pub mod error;
pub mod experiments;
pub mod io;
pub mod metrics;
pub mod model;
pub mod problem;
pub mod rng;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::apis::{run_apis, run_apis_from, run_apis_observed, ApisConfig, ApisInit, ApisOutput, InitialProposal, StopRule};
    pub use crate::baselines::{bootstrap_filter, ffbsi, filter_smoother, kalman_rts, LinearGaussianSpec};
    pub use crate::controller::{Control, FnControl, LinearFeedbackController, StandardizationStats, ZeroControl};
    pub use crate::error::{Error, Result};
    pub use crate::metrics::Marginals;
    pub use crate::model::{
        BrownianMotion, DiffusionModel, GaussianObservationModel, InitialStateDistribution, NeuralNetwork,
        NeuralParams, Observation, ObservationSeries, TimeGrid,
    };
    pub use crate::problem::SmoothingProblem;
}

// The README and the guide in `book/` are compiled as doctests, one module
// per file so a failure points at its chapter.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/problems.md")]
    mod problems {}
    #[doc = include_str!("../../../book/src/adaptive-smoother.md")]
    mod adaptive_smoother {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
}
