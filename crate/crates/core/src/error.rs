use alloc::boxed::Box;
use alloc::string::String;

use crate::qr::QuantileFit;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument fell outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    /// The design matrix does not have full column rank.
    #[error("singular design: column {column} is linearly dependent on the other columns")]
    SingularDesign { column: usize },

    /// The quantile-regression solver ran out of iterations. The best iterate is attached.
    #[error("solver did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize, best: Box<QuantileFit> },

    #[error("simulation failed at period {period}: {reason}")]
    Simulation { period: usize, reason: String },

    #[error("non-finite value at node {node}, period {period}")]
    NonFinite { node: usize, period: usize },

    #[error("degenerate instrument: column {column} has zero variance")]
    DegenerateInstrument { column: usize },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("inference failed: {0}")]
    Inference(String),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("degenerate fit: restricted objective is zero")]
    DegenerateFit,
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub(crate) fn check_probability(p: f64, what: &str) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(alloc::format!("{what} must lie in (0, 1), got {p}")))
    }
}
