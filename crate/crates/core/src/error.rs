//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid symmetry violated: {0}")]
    GridSymmetry(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("size cap exceeded: {what} = {got} > cap {cap}")]
    SizeCap {
        what: &'static str,
        got: usize,
        cap: usize,
    },

    #[error("reality violation: imaginary residue {residue:.3e} exceeds {limit:.3e}")]
    RealityViolation { residue: f64, limit: f64 },

    #[error("coupling family has no derivative data: {0}")]
    UnsupportedDerivative(String),

    #[error("coupling family is not tabulated at position {0:?}")]
    PositionNotTabulated(Vec<f64>),

    #[error("operation requires the characteristic-cutoff coupling family")]
    UnsupportedForm,

    #[error("assumption validation failed: {0}")]
    AssumptionsFailed(String),

    #[error("solver did not converge: {0}")]
    Unconverged(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
