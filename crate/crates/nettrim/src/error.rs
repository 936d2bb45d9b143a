//! Crate-wide error type.
//!
//! Variants are grouped by how the CLI maps them to exit codes:
//! configuration problems (exit 1), data/IO problems (exit 2) and numeric
//! faults (exit 3).

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad layer stack, bad hyperparameters, bad
    /// policy, unknown config keys.
    #[error("configuration error: {0}")]
    Config(String),

    /// Two consecutive layers whose shapes do not compose.
    #[error("configuration error: layer {upstream} ({upstream_desc}) produces shape {shape:?}, incompatible with layer {downstream} ({downstream_desc}): {detail}")]
    ShapeChain {
        upstream: usize,
        upstream_desc: String,
        downstream: usize,
        downstream_desc: String,
        shape: Vec<usize>,
        detail: String,
    },

    /// Caller handed an operation a value outside its domain.
    #[error("input error: {0}")]
    Input(String),

    /// Dataset files that exist but cannot be parsed.
    #[error("data error: {0}")]
    Data(String),

    /// Filesystem failure, tagged with the offending path.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A layer emitted NaN or infinity during a forward pass.
    #[error("numeric fault: non-finite value in output of layer {layer} ({name})")]
    Numeric { layer: usize, name: String },

    /// Training loss left the finite range; the last finite weights are
    /// carried in the error so callers can checkpoint them.
    #[error("training diverged during epoch {epoch}: loss is not finite")]
    Diverged {
        epoch: usize,
        last_good: Box<crate::network::Network>,
    },

    #[error("checkpoint: bad magic bytes (not a checkpoint file)")]
    BadMagic,

    #[error("checkpoint: unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint: truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("checkpoint: payload length disagrees with declared shapes: {0}")]
    PayloadMismatch(String),
}

impl Error {
    /// Exit code the CLI uses for this error class.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::ShapeChain { .. } | Error::Input(_) => 1,
            Error::Data(_)
            | Error::Io { .. }
            | Error::BadMagic
            | Error::VersionMismatch { .. }
            | Error::TruncatedPayload { .. }
            | Error::PayloadMismatch(_) => 2,
            Error::Numeric { .. } | Error::Diverged { .. } => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
