use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure at timestep {timestep:?}: {message}")]
    NumericFailure {
        message: String,
        timestep: Option<usize>,
    },

    #[error("empty domain: {0}")]
    EmptyDomain(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("value out of range at pixel ({x}, {y}): {message}")]
    Range { x: usize, y: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bridge error: {0}")]
    Bridge(String),

    #[error("phase {phase}{}: {source}", sample.map(|i| format!(" (sample {i})")).unwrap_or_default())]
    Phase {
        phase: &'static str,
        sample: Option<usize>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>, timestep: Option<usize>) -> Self {
        Error::NumericFailure {
            message: msg.into(),
            timestep,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_phase(self, phase: &'static str, sample: Option<usize>) -> Self {
        Error::Phase {
            phase,
            sample,
            source: Box::new(self),
        }
    }

    /// True when the error stems from configuration rather than execution.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Phase { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
