//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by tensor ops, model handling, simulation and IO.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes or layer dimensions.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Invalid argument value (empty input, out-of-range parameter, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Model layer graph violates a structural requirement.
    #[error("model structure: {0}")]
    Structure(String),

    /// Threshold estimation failed for a layer.
    #[error("threshold estimation failed for spiking layer {layer}: {msg}")]
    Threshold { layer: usize, msg: String },

    /// Training diverged or otherwise failed numerically.
    #[error("training failed: {0}")]
    Training(String),

    /// Calibration produced a non-finite correction.
    #[error("calibration produced a non-finite correction at layer {layer}, t={t}")]
    Calibration { layer: usize, t: usize },

    /// Malformed file contents (bad magic, truncation, version mismatch).
    #[error("format error: {0}")]
    Format(String),

    /// IO failure, annotated with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Invalid configuration file or option combination.
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for config/file/usage errors,
    /// 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Format(_)
            | Error::Config(_)
            | Error::Argument(_)
            | Error::Structure(_)
            | Error::Dimension(_) => 2,
            Error::Threshold { .. } | Error::Training(_) | Error::Calibration { .. } => 3,
        }
    }
}
