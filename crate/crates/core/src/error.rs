//! Crate-wide error type.

use std::fmt;
use std::path::PathBuf;

/// Errors surfaced by the detection pipeline.
#[derive(Debug)]
pub enum Error {
    /// A referenced file does not exist.
    MissingFile { path: PathBuf },
    /// An image file exists but could not be decoded.
    Decode { path: PathBuf, reason: String },
    /// An output file could not be written.
    Write { path: PathBuf, reason: String },
    /// Generic I/O failure outside image codecs.
    Io { context: String, reason: String },
    /// Image dimensions violate an operation's preconditions.
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },
    /// Two rasters that must share dimensions do not.
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
        context: String,
    },
    /// A patch rectangle extends outside its image.
    RectOutOfBounds {
        x: usize,
        y: usize,
        size: usize,
        width: usize,
        height: usize,
    },
    /// An index build was requested over zero points.
    EmptyPointSet,
    /// A query asked for more neighbors than the store holds.
    NotEnoughPoints { have: usize, need: usize },
    /// A dataset has too few entries for the requested operation.
    DatasetTooSmall { have: usize, need: usize },
    /// ROC scoring against a mask with a single class.
    DegenerateTruth { positives: usize, negatives: usize },
    /// A parameter value violates its documented constraints.
    InvalidParams(String),
    /// A configuration file or override could not be parsed.
    InvalidConfig { key: String, reason: String },
    /// A dataset manifest row is malformed.
    Manifest { line: usize, reason: String },
    /// A serialized index file is malformed or of an unknown version.
    IndexFormat(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::MissingFile { path } => write!(f, "missing-file: {}", path.display()),
            Error::Decode { path, reason } => {
                write!(f, "decode: {}: {}", path.display(), reason)
            }
            Error::Write { path, reason } => write!(f, "write: {}: {}", path.display(), reason),
            Error::Io { context, reason } => write!(f, "io: {}: {}", context, reason),
            Error::ImageTooSmall { width, height, min } => write!(
                f,
                "image-too-small: {}x{} (minimum {}x{})",
                width, height, min, min
            ),
            Error::DimensionMismatch {
                expected,
                got,
                context,
            } => write!(
                f,
                "dimension-mismatch: {}: expected {}x{}, got {}x{}",
                context, expected.0, expected.1, got.0, got.1
            ),
            Error::RectOutOfBounds {
                x,
                y,
                size,
                width,
                height,
            } => write!(
                f,
                "rect-out-of-bounds: {}x{} patch at ({},{}) in {}x{} image",
                size, size, x, y, width, height
            ),
            Error::EmptyPointSet => write!(f, "empty-point-set"),
            Error::NotEnoughPoints { have, need } => {
                write!(f, "not-enough-points: have {}, need {}", have, need)
            }
            Error::DatasetTooSmall { have, need } => {
                write!(f, "dataset-too-small: have {}, need {}", have, need)
            }
            Error::DegenerateTruth {
                positives,
                negatives,
            } => write!(
                f,
                "degenerate-truth: {} positives, {} negatives",
                positives, negatives
            ),
            Error::InvalidParams(reason) => write!(f, "invalid-params: {}", reason),
            Error::InvalidConfig { key, reason } => {
                write!(f, "invalid-config: {}: {}", key, reason)
            }
            Error::Manifest { line, reason } => {
                write!(f, "manifest: line {}: {}", line, reason)
            }
            Error::IndexFormat(reason) => write!(f, "index-format: {}", reason),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
