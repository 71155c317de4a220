use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QcError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("quadrature budget exceeded: value {value:.6e}, error estimate {abs_err:.3e} after {evals} evaluations")]
    QuadratureBudget { value: f64, abs_err: f64, evals: usize },

    #[error("Newton iteration did not converge after {iters} steps (last residual {residual:.3e})")]
    NewtonDivergence { iters: usize, residual: f64 },

    #[error("positivity lost during iteration: {0}")]
    Positivity(String),

    #[error("no admissible solution: {0}")]
    NoSolution(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("inadmissible configuration: {0}")]
    Inadmissible(String),

    #[error("ill-conditioned linear map: smallest singular value {0:.3e}")]
    IllConditioned(f64),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("constant mismatch: {0}")]
    ConstantMismatch(String),
}

impl QcError {
    /// True for failures of a numerical method, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            QcError::QuadratureBudget { .. }
                | QcError::NewtonDivergence { .. }
                | QcError::Positivity(_)
                | QcError::NoSolution(_)
                | QcError::Calibration(_)
                | QcError::IllConditioned(_)
                | QcError::ConstantMismatch(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, QcError>;
