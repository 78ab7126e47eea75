use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic bytes: expected LEADFEAT")]
    BadMagic,

    #[error("unsupported feature file version {0}")]
    UnsupportedVersion(u32),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("label {label} at row {row} is out of range for {num_classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: u32,
        num_classes: usize,
    },

    #[error("non-finite feature value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("invalid feature set: {0}")]
    InvalidFeatureSet(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("no evolution coefficient for class {0}")]
    MissingClassCoefficient(usize),

    #[error("all mean eigenvalues are zero; cannot calibrate the time scale")]
    AllZeroEigenvalues,

    #[error("model ids do not match: {0}")]
    MismatchedIds(String),

    #[error("need at least two models, got {0}")]
    FewerThanTwo(usize),

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("k = {k} is outside 1..={m}")]
    BadK { k: usize, m: usize },

    #[error("gradient descent diverged at step {step}")]
    Divergence { step: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ground truth error: {0}")]
    GroundTruth(String),

    #[error("invalid report: {0}")]
    InvalidReport(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "Io",
            Error::BadMagic => "BadMagic",
            Error::UnsupportedVersion(_) => "UnsupportedVersion",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::LabelOutOfRange { .. } => "LabelOutOfRange",
            Error::NonFiniteValue { .. } => "NonFiniteValue",
            Error::EmptyClass(_) => "EmptyClass",
            Error::InvalidFeatureSet(_) => "InvalidFeatureSet",
            Error::NotSymmetric(_) => "NotSymmetric",
            Error::MissingClassCoefficient(_) => "MissingClassCoefficient",
            Error::AllZeroEigenvalues => "AllZeroEigenvalues",
            Error::MismatchedIds(_) => "MismatchedIds",
            Error::FewerThanTwo(_) => "FewerThanTwo",
            Error::ZeroVariance(_) => "ZeroVariance",
            Error::BadK { .. } => "BadK",
            Error::Divergence { .. } => "Divergence",
            Error::Config(_) => "Config",
            Error::GroundTruth(_) => "GroundTruth",
            Error::InvalidReport(_) => "InvalidReport",
            Error::Json(_) => "Json",
        }
    }

    /// True for errors caused by malformed input data (as opposed to bad
    /// arguments or numerical failure).
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::BadMagic
                | Error::UnsupportedVersion(_)
                | Error::DimensionMismatch(_)
                | Error::LabelOutOfRange { .. }
                | Error::NonFiniteValue { .. }
                | Error::EmptyClass(_)
                | Error::InvalidFeatureSet(_)
                | Error::GroundTruth(_)
                | Error::InvalidReport(_)
                | Error::Json(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
