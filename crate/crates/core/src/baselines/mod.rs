//! Reference smoothers.
//!
//! [`bootstrap_filter`] runs a particle filter with the uncontrolled dynamics
//! as proposal and systematic resampling at every observation.
//! [`filter_smoother`] reads smoothing estimates off its ancestral paths and
//! [`ffbsi`] draws fresh trajectories by backward simulation. For
//! linear-Gaussian problems [`kalman_rts`] gives the exact answer.

mod ffbsi;
mod filter;
mod kalman;

pub use ffbsi::{ffbsi, FfbsiOutput};
pub use filter::{bootstrap_filter, filter_smoother, systematic_resample, FilterOutput, FilterSmootherOutput};
pub use kalman::{kalman_rts, KalmanOutput, LinearGaussianSpec};
