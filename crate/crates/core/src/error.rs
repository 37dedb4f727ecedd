use thiserror::Error;

/// Errors raised by the model, the solvers and the generators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SblError {
    /// A factorization failed or the system was too ill-conditioned to trust.
    #[error("numerical failure in {context}: gamma in [{gamma_min:.3e}, {gamma_max:.3e}]")]
    NumericalFailure {
        context: String,
        gamma_min: f64,
        gamma_max: f64,
    },
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl SblError {
    pub(crate) fn numerical(context: impl Into<String>, gamma: &[f64]) -> Self {
        let (lo, hi) = gamma
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &g| {
                (lo.min(g), hi.max(g))
            });
        SblError::NumericalFailure {
            context: context.into(),
            gamma_min: lo,
            gamma_max: hi,
        }
    }
}

pub type Result<T> = std::result::Result<T, SblError>;
