use thiserror::Error;

/// Errors raised across the library. Variants carry enough context to locate the failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("structure error: {0}")]
    Structure(String),

    #[error("singular operator: {0}")]
    Singular(String),

    #[error("degenerate shift: {0}")]
    DegenerateShift(String),

    #[error("quadrature accuracy not reached: {msg} (estimate {estimate:.3e})")]
    Accuracy { msg: String, estimate: f64 },

    #[error("sign condition violated: {quantity} = {value:.6e} at beta = {beta:.6e}, phi = {phi:.6e}")]
    SignCondition {
        quantity: &'static str,
        value: f64,
        beta: f64,
        phi: f64,
    },

    #[error("finite-difference step error: {0}")]
    Step(String),

    #[error("linear solve failed: {0}")]
    Solve(String),

    #[error("contraction failure: {0}")]
    Contraction(String),

    #[error("no convergence: {msg}")]
    NonConvergence {
        msg: String,
        last: Option<Box<crate::solver::Stalled>>,
    },

    #[error("inversion error: {0}")]
    Inversion(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
