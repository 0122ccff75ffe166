//! Crate-wide error type and result alias.

use thiserror::Error;

/// Errors surfaced by the tracking pipeline and its file formats.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two grids or channel lists that must agree did not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A numeric input contained NaN or infinity.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// A spectrum flagged as real-origin failed its conjugate-symmetry check.
    #[error("spectrum flagged real-origin is not conjugate-symmetric (max deviation {deviation:.3e})")]
    AsymmetricSpectrum { deviation: f64 },

    /// External tensor file did not start with the expected magic bytes.
    #[error("bad tensor magic: expected \"CSOT\", found {found:?}")]
    BadMagic { found: [u8; 4] },

    /// External tensor header version is not supported.
    #[error("unsupported tensor version {0}")]
    UnsupportedVersion(u16),

    /// External tensor header declares dimensions that overflow or are zero.
    #[error("tensor dimensions invalid or too large: {height}x{width}x{channels}")]
    DimensionOverflow {
        height: u64,
        width: u64,
        channels: u64,
    },

    /// External tensor payload ended before the declared element count.
    #[error("tensor payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    /// An iterative solver produced a non-finite intermediate.
    #[error("solver diverged at iteration {iteration}")]
    SolverDiverged { iteration: usize },

    /// A configuration file line or key could not be parsed.
    #[error("config error: {0}")]
    Config(String),

    /// A per-frame tracking failure, tagged with the frame index.
    #[error("tracking failed at frame {frame}: {source}")]
    Tracking {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    /// Trajectory and ground truth differ in length.
    #[error("trajectory length {trajectory} does not match ground truth length {ground_truth}")]
    LengthMismatch {
        trajectory: usize,
        ground_truth: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Image(e.to_string())
    }
}
