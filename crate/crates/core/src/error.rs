use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: file is empty or has no data rows")]
    EmptyFile { path: PathBuf },
    #[error("no column contains numeric data")]
    NoNumericColumns,
    #[error("duplicate column header `{0}` after normalization")]
    DuplicateHeader(String),
    #[error("column `{0}` has no observed entries")]
    AllMissingColumn(String),
    #[error("matrix contains non-finite values")]
    NonFinite,
    #[error("empty singular value spectrum")]
    EmptySpectrum,
    #[error("empty input vector")]
    EmptyVector,
    #[error("series of length {len} is too short (need at least {min})")]
    TooShort { len: usize, min: usize },
    #[error("no sentence template for measure `{0}`")]
    UnknownMeasure(String),
    #[error("measure `{0}` needs declared column bounds")]
    MissingBounds(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("provider mismatch: `{expected}` vs `{got}`")]
    ProviderMismatch { expected: String, got: String },
    #[error("degenerate view: {0}")]
    DegenerateView(String),
    #[error("penalty {0} is infeasible")]
    InfeasiblePenalty(f64),
    #[error("weight index {index} out of range for fingerprint with {len} sentences")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("no ground-truth partner for `{0}`")]
    MissingTruth(String),
    #[error("embedding service unavailable: {0}")]
    ServiceUnavailable(String),
    #[error("corrupt catalog entry `{id}`: {reason}")]
    CorruptEntry { id: String, reason: String },
    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse error classes used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Config,
    Internal,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            EmptyFile { .. } | NoNumericColumns | DuplicateHeader(_) | AllMissingColumn(_)
            | NonFinite | EmptyVector | TooShort { .. } | Io(_) | Csv(_) | Json(_)
            | Format { .. } | CorruptEntry { .. } | IndexOutOfRange { .. } | MissingTruth(_)
            | DegenerateView(_) => ErrorClass::Input,
            Config(_) | MissingBounds(_) | ProviderMismatch { .. } | DimMismatch { .. }
            | InfeasiblePenalty(_) | ServiceUnavailable(_) => ErrorClass::Config,
            EmptySpectrum | UnknownMeasure(_) => ErrorClass::Internal,
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }
}
