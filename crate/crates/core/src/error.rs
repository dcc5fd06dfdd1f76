use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The requested computation is outside the supported regime (e.g. zero drift).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A closed form was requested outside the set where it is finite.
    #[error("domain error: {condition} violated ({detail})")]
    Domain {
        condition: &'static str,
        detail: String,
    },

    #[error("horizon too short: {0}")]
    HorizonTooShort(String),

    #[error("sample too small: need at least {needed}, got {got}")]
    SampleTooSmall { needed: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn domain(condition: &'static str, detail: impl Into<String>) -> Error {
    Error::Domain {
        condition,
        detail: detail.into(),
    }
}
