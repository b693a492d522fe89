use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("value outside the domain: {0}")]
    Domain(String),

    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("token {token} (channel {channel}) is zero; initial tokens must be nonzero")]
    ZeroToken { token: usize, channel: usize },

    #[error("operation requires a single channel (D = 1), got D = {0}")]
    UnsupportedDimension(usize),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("tied scores at positions {0} and {1}; the Jacobian is undefined there")]
    DegeneratePoint(usize, usize),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
