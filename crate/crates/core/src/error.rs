use std::path::PathBuf;

/// Errors raised by the image, detection, flow and tracking layers.
///
/// Cascade files and evaluation inputs have their own error types
/// ([`crate::cascade::ParseError`], [`crate::eval::EvalError`]) because they
/// carry positional information about the offending input.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("window at ({x}, {y}) scale {scale} does not fit a {width}x{height} image")]
    WindowOutOfBounds {
        x: u32,
        y: u32,
        scale: f64,
        width: usize,
        height: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty frame sequence")]
    EmptySequence,

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
