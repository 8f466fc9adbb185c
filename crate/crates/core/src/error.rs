use thiserror::Error;

use crate::lp::LpError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid measure space: {0}")]
    InvalidSpace(String),

    #[error("atom index {index} out of range for a space with {atoms} atoms")]
    IndexOutOfRange { index: usize, atoms: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid exponent: {0}")]
    InvalidExponent(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid gauge: {0}")]
    InvalidGauge(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error(
        "subset enumeration over {atoms} atoms exceeds the limit of {limit} \
         (raise INTERP_LAB_ENUM_LIMIT or use an equal-weight fast path)"
    )]
    EnumerationLimit { atoms: usize, limit: usize },

    #[error(transparent)]
    Lp(#[from] LpError),

    #[error("cutting-plane loop did not converge within {0} rounds")]
    CuttingPlaneStalled(usize),

    #[error("unknown verification suite `{0}`")]
    UnknownSuite(String),
}
