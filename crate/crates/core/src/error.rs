use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("duplicate record for individual `{individual}` at wave {wave}")]
    DuplicateKey { individual: String, wave: i64 },
    #[error("row {row}: outcome {value} outside 1..={categories}")]
    OutcomeOutOfRange {
        row: usize,
        value: i64,
        categories: usize,
    },
    #[error("row {row}, column `{column}`: {message}")]
    BadCell {
        row: usize,
        column: String,
        message: String,
    },
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
    #[error("covariate `{column}` has negative value {value} but is log-transformed")]
    NegativeLogInput { column: String, value: f64 },
    #[error("design column `{0}` is constant")]
    ConstantColumn(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown {kind} key `{key}`")]
    UnknownKey { kind: &'static str, key: String },
    #[error("{0} is not defined for the normal_normal family")]
    UnsupportedFamily(&'static str),
    #[error("sampler failure: {0}")]
    Sampler(String),
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    /// Stable, machine-readable category used for process exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::MissingColumn(_)
            | Error::DuplicateKey { .. }
            | Error::OutcomeOutOfRange { .. }
            | Error::BadCell { .. } => "data",
            Error::UnknownCovariate(_)
            | Error::NegativeLogInput { .. }
            | Error::ConstantColumn(_) => "design",
            Error::InvalidParameter(_) | Error::DimensionMismatch { .. } => "parameter",
            Error::UnknownKey { .. } => "model",
            Error::UnsupportedFamily(_) => "unsupported",
            Error::Sampler(_) => "sampler",
            Error::Invalid(_) => "invalid",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
