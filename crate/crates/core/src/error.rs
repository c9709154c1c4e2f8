use thiserror::Error;

/// Errors raised by the E-PINN library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure at epoch {epoch}: {message} (weight norm {weight_norm:.3e}, gradient norm {grad_norm:.3e})")]
    NumericalFailure {
        epoch: usize,
        message: String,
        weight_norm: f64,
        grad_norm: f64,
    },

    #[error("solver failure at omega {omega:?}: {message}")]
    SolverFailure { omega: Vec<f64>, message: String },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::NumericalFailure {
            epoch: 0,
            message: msg.into(),
            weight_norm: f64::NAN,
            grad_norm: f64::NAN,
        }
    }

    /// True for failures that stem from arithmetic (non-finite values, singular systems).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalFailure { .. } | Error::SolverFailure { .. } | Error::DegenerateInput(_)
        )
    }
}
