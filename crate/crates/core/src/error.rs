use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },

    #[error("file truncated while reading {context}")]
    TruncatedFile { context: &'static str },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("label {label} out of range for {num_classes} classes (record {record:?})")]
    LabelOutOfRange {
        record: String,
        label: u32,
        num_classes: usize,
    },

    #[error("non-finite value in {context}")]
    NonFiniteValue { context: String },

    #[error("{context} is not unit-norm (norm {norm})")]
    NotUnitNorm { context: String, norm: f64 },

    #[error("zero vector in record {record:?} cannot be normalized")]
    ZeroVector { record: String },

    #[error("malformed header: {0}")]
    InvalidHeader(String),

    #[error("class {class} has {available} train records, {requested} shots requested")]
    InsufficientShots {
        class: usize,
        available: usize,
        requested: usize,
    },

    #[error("adapter output has (near-)zero norm")]
    DegenerateOutput,

    #[error("variant {variant} needs adapter parameters")]
    MissingAdapter { variant: &'static str },

    #[error("variant {variant} needs a support set")]
    MissingSupport { variant: &'static str },

    #[error("variant {variant} forces alpha = {forced}, got {alpha}")]
    VariantConstraintViolated {
        variant: &'static str,
        forced: f64,
        alpha: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid search needs non-empty alpha and beta grids")]
    EmptyGrid,

    #[error("empty batch")]
    EmptyBatch,

    #[error("{split} split is empty")]
    EmptySplit { split: &'static str },

    #[error("bad dimension: dim {dim} must be at least the number of classes {num_classes}")]
    BadDimension { dim: usize, num_classes: usize },

    #[error("datasets do not share a label space: {0}")]
    LabelSpaceMismatch(String),

    #[error("I/O error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
