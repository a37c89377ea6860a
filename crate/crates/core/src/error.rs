use std::path::PathBuf;

/// Everything that can go wrong inside the smoothers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A drift, diffusion, state or cost evaluated to NaN or infinity.
    #[error("non-finite {what} (particle {particle:?}, step {step:?})")]
    Numerical {
        what: &'static str,
        particle: Option<usize>,
        step: Option<usize>,
    },

    /// The one-step noise covariance cannot be inverted, so no backward kernel exists.
    #[error("singular diffusion covariance at step {step:?} (condition number {condition:e})")]
    SingularDiffusion { step: Option<usize>, condition: f64 },

    #[error("correlation matrix at step {step} is ill-conditioned (condition number {condition:e})")]
    MatrixInversion { step: usize, condition: f64 },

    #[error("annealing needed more than {cap} temperature increases to reach ESS {target}")]
    AnnealCap { cap: u32, target: f64 },

    #[error("all filter weights vanished at step {step}")]
    DegenerateWeights { step: usize },

    #[error("all backward weights vanished at step {step}")]
    DegenerateBackwardWeights { step: usize },

    #[error("at least 2 runs are required, got {runs}")]
    InsufficientRuns { runs: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for the failures the CLI reports as numerical (exit code 3).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical { .. }
                | Error::SingularDiffusion { .. }
                | Error::MatrixInversion { .. }
                | Error::AnnealCap { .. }
                | Error::DegenerateWeights { .. }
                | Error::DegenerateBackwardWeights { .. }
        )
    }
}
