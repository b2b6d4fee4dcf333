//! Crate-wide error type.

use std::io;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("event {index} lies outside the sensor array")]
    OutOfBounds { index: usize },

    #[error("event {index} has polarity {value}; expected -1 or +1")]
    NegativePolarityEncoding { index: usize, value: i8 },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    MagicMismatch { expected: [u8; 4], found: [u8; 4] },

    #[error("file ended before {0} bytes could be read")]
    TruncatedFile(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("scene produces no intensity change")]
    DegenerateScene,

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("all timestamps in the window are equal")]
    ZeroVariance,

    #[error("no eligible events to sample from")]
    NoEligibleEvents,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("loss became non-finite at epoch {epoch}")]
    DivergenceDetected { epoch: usize },

    #[error("stream is empty")]
    EmptyStream,

    #[error("checkpoint required but not found: {0}")]
    MissingCheckpoint(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    /// Process exit code: 1 validation/parse, 2 domain, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::OutOfBounds { .. }
            | Error::NegativePolarityEncoding { .. }
            | Error::Parse { .. }
            | Error::MagicMismatch { .. }
            | Error::TruncatedFile(_)
            | Error::Checksum { .. }
            | Error::Config(_)
            | Error::InvalidScene(_)
            | Error::MissingCheckpoint(_)
            | Error::Io(_) => 1,
            Error::DegenerateScene
            | Error::ZeroVariance
            | Error::NoEligibleEvents
            | Error::DivergenceDetected { .. }
            | Error::EmptyStream => 2,
            Error::ShapeMismatch(_) | Error::Internal(_) => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
