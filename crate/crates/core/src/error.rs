use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RisError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("singular training system: {0}")]
    Singular(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("infeasible power budget: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, RisError>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(RisError::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
