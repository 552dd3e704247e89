use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter lies outside the domain where the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A table, enumeration, or sample budget would exceed its configured cap.
    #[error("resource limit exceeded: {what} needs {needed}, budget is {budget}")]
    Resource {
        what: String,
        needed: u128,
        budget: u128,
    },

    /// The conditioning event has probability zero.
    #[error("conditioning error: {0}")]
    Conditioning(String),

    /// A variance (or the residual τ) vanishes where a positive value is required.
    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// Not enough samples or exceedances for the requested estimate.
    #[error("insufficient statistical power: {0}")]
    StatisticalPower(String),

    /// The rejection sampler fell below its acceptance floor.
    #[error("acceptance rate {rate:.3e} below floor {floor:.1e} after {proposals} proposals")]
    AcceptanceFloor {
        rate: f64,
        floor: f64,
        proposals: u64,
    },

    #[error("{0}")]
    Config(String),

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
