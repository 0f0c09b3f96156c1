use alloc::string::String;

/// Failure modes shared by every protocol in the crate.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    /// The peer vanished or the link failed underneath us.
    #[error("transport error: {0}")]
    Transport(String),
    /// The peers disagree about where they are in a protocol.
    #[error("protocol error: {0}")]
    Protocol(String),
    /// A correlation pool ran dry.
    #[error("preprocessing underrun at {step}: {detail}")]
    Underrun { step: String, detail: String },
    #[error("value out of range: {0}")]
    Range(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    pub(crate) fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn underrun(step: &str, detail: impl Into<String>) -> Self {
        Error::Underrun {
            step: step.into(),
            detail: detail.into(),
        }
    }
}
