use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation failed{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Validation { line: Option<usize>, message: String },

    #[error("{kind} not found: {name}")]
    NotFound { kind: &'static str, name: String },

    #[error("referential integrity: unknown {kind} {ids:?}")]
    Orphans { kind: &'static str, ids: Vec<String> },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("data quality: {0}")]
    DataQuality(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("inconsistent input: {0}")]
    Inconsistent(String),

    #[error("cycle in cascade links involving {0}")]
    Cycle(String),

    #[error("incompatible model file: {0}")]
    Incompatible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Sql(#[from] rusqlite::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(message: impl Into<String>) -> Self {
        Error::Validation { line: None, message: message.into() }
    }

    pub(crate) fn at_line(line: usize, message: impl Into<String>) -> Self {
        Error::Validation { line: Some(line), message: message.into() }
    }

    pub(crate) fn not_found(kind: &'static str, name: impl Into<String>) -> Self {
        Error::NotFound { kind, name: name.into() }
    }

    /// Short machine-readable tag, stable across releases.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Validation { .. } => "validation",
            Error::NotFound { .. } => "not_found",
            Error::Orphans { .. } => "orphan_ids",
            Error::Domain(_) => "domain",
            Error::DataQuality(_) => "data_quality",
            Error::Singular(_) => "singular",
            Error::InsufficientData(_) => "insufficient_data",
            Error::UndefinedCorrelation(_) => "undefined_correlation",
            Error::Inconsistent(_) => "inconsistent",
            Error::Cycle(_) => "cycle",
            Error::Incompatible(_) => "incompatible_model",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Sql(_) => "store",
            Error::Json(_) => "json",
        }
    }
}
