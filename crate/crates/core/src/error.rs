use std::path::PathBuf;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number and no encoding is declared")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column `{column}`: missing value")]
    MissingValue { row: usize, column: String },
    #[error("empty result")]
    EmptyResult,
    #[error("feature `{0}` is constant; cannot normalize")]
    ConstantFeature(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("split leaves the {0} side empty")]
    EmptySplit(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no direction has positive variance")]
    DegenerateData,
    #[error("all EM restarts degenerated")]
    AllRestartsDegenerate,
    #[error("model version mismatch: expected `{expected}`, found `{found}`")]
    VersionMismatch { expected: String, found: String },
    #[error("malformed model document: {0}")]
    MalformedModel(String),
    #[error("no reports")]
    NoReports,
    #[error("report class {index} outside 1..={k}")]
    ReportOutOfRange { index: usize, k: usize },
    #[error("cluster {0} has no participant mass")]
    EmptyCluster(usize),
    #[error("propensity score {0} outside (0, 1]")]
    InvalidPropensity(f64),
    #[error("estimated non-participant distribution is empty")]
    EmptyEstimate,
    #[error("not a categorical round (mechanism `{0}`)")]
    NotCategorical(String),
    #[error("transport solver: {0}")]
    Transport(String),
    #[error("cell {cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
