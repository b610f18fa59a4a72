use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive semi-definite (min eigenvalue {min_eigenvalue:e}, tolerance {tolerance:e})")]
    NotPsd { min_eigenvalue: f64, tolerance: f64 },

    #[error("inner maximization is not strongly concave (margin {margin:e})")]
    NotStronglyConcave { margin: f64 },

    #[error("discriminator is not c-concave (smoothness bound {bound} >= 1)")]
    NotCConcave { bound: f64 },

    #[error("step-size regime infeasible: lambda {lambda} must exceed 2*eta = {}", 2.0 * eta)]
    InfeasibleRegime { lambda: f64, eta: f64 },

    #[error("training diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("singular covariance for component {component}")]
    SingularCovariance { component: usize },

    #[error("problem size {n} exceeds the limit of {max}")]
    TooLarge { n: usize, max: usize },

    #[error("insufficient samples: {got} in a split half, need at least {need}")]
    InsufficientSamples { got: usize, need: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures of the numerics rather than of the inputs or the filesystem.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPsd { .. }
                | Error::NotStronglyConcave { .. }
                | Error::NotCConcave { .. }
                | Error::InfeasibleRegime { .. }
                | Error::Diverged { .. }
                | Error::SingularCovariance { .. }
                | Error::InsufficientSamples { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
