use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("shape mismatch at layer {layer}: {detail}")]
    Shape { layer: usize, detail: String },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid unit {unit} at layer {layer}: {reason}")]
    InvalidUnit {
        layer: usize,
        unit: usize,
        reason: &'static str,
    },

    #[error("invalid layer {layer}: {reason}")]
    InvalidLayer { layer: usize, reason: &'static str },

    #[error("interval bounds exploded at layer {layer} (|bound| = {magnitude:e})")]
    Explosion { layer: usize, magnitude: f64 },

    #[error("bounds map is stale for layer {layer}")]
    StaleBounds { layer: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
