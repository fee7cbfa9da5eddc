use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised across the pipeline.
///
/// Every variant belongs to one of three families (parameter, data/format,
/// numeric) reported by [`Error::category`]; the CLI maps them onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("architecture error: {0}")]
    Architecture(String),

    #[error("rank error: requested {requested} components but achievable rank is {achievable}")]
    Rank { requested: usize, achievable: usize },

    #[error("convergence error: {0}")]
    Convergence(String),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("stratification error: class {class} has {count} labeled samples, need at least 4")]
    Stratification { class: usize, count: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Parameter,
    Data,
    Numeric,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Dimension(_)
            | Error::Parameter(_)
            | Error::Index(_)
            | Error::Contract(_)
            | Error::Architecture(_)
            | Error::Stratification { .. } => ErrorCategory::Parameter,
            Error::Format(_) | Error::Manifest(_) | Error::Io(_) | Error::Json(_) => ErrorCategory::Data,
            Error::Rank { .. } | Error::Convergence(_) | Error::Oracle(_) => ErrorCategory::Numeric,
        }
    }

    /// Short machine-parsable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Parameter(_) => "parameter",
            Error::Index(_) => "index",
            Error::Contract(_) => "contract",
            Error::Architecture(_) => "architecture",
            Error::Rank { .. } => "rank",
            Error::Convergence(_) => "convergence",
            Error::Oracle(_) => "oracle",
            Error::Stratification { .. } => "stratification",
            Error::Format(_) => "format",
            Error::Manifest(_) => "manifest",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
