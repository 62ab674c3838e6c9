use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("covariance matrix is not positive definite (s11={s11}, s12={s12}, s22={s22})")]
    NotPositiveDefinite { s11: f64, s12: f64, s22: f64 },

    #[error("observation outside GEV support (1 + xi*(y-mu)/lambda = {0})")]
    SupportViolation(f64),

    #[error("dependence scale a={0} is degenerate for this operation")]
    DegenerateDependence(f64),

    #[error("unknown covariate `{0}` (available: lon, lat, alt)")]
    UnknownCovariate(String),

    #[error("design matrix for {0} is rank deficient")]
    RankDeficient(String),

    #[error("matrix is singular (condition number {0:.3e})")]
    Singular(f64),

    #[error("models are not nested: {0}")]
    NotNested(String),

    #[error("root not bracketed: {0}")]
    NotBracketed(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
