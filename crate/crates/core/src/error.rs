use thiserror::Error;

/// Engine-level failure modes.
///
/// `Invalid` covers rejected inputs (bad matrices, non-unit directions,
/// malformed grids); `Numerical` covers algorithms that ran but could not
/// produce a trustworthy answer (eigensolver breakdown, unbracketed peaks,
/// undefined curvatures).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<V> = std::result::Result<V, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
