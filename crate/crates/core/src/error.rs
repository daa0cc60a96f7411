use thiserror::Error;

/// Errors raised by the simulation, regression and game layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("ill-conditioned regression at cell {cell}: {detail}")]
    IllConditionedRegression { cell: usize, detail: String },

    #[error("numerical blow-up at cell {cell}: {detail}")]
    NumericalBlowup { cell: usize, detail: String },

    #[error("no convergence after {iterations} iterations (defect {defect:.3e}): {detail}")]
    NoConvergence {
        iterations: usize,
        defect: f64,
        detail: String,
    },

    #[error("scenario infeasible: {0}")]
    ScenarioInfeasible(String),

    #[error("oracle error: {0}")]
    OracleError(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidArgument(msg()))
    }
}
