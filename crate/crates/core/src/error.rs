//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("age domain error: {0}")]
    AgeDomain(String),

    #[error("{value} is outside the domain [{lo}, {hi}] of chart `{chart}`")]
    OutsideDomain {
        chart: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("degenerate variance for `{context}` at x = {at}: sigma^2 = {sigma2} <= floor {floor}")]
    DegenerateVariance {
        context: String,
        at: f64,
        sigma2: f64,
        floor: f64,
    },

    #[error("chart `{chart}` has no variance model; {operation} needs one")]
    MissingVariance { chart: String, operation: String },

    #[error("negative inner polynomial at x = {at} for a square-transformed mean model")]
    NegativeSquareRoot { at: f64 },

    #[error("unknown chart `{name}`; available charts: {available}")]
    UnknownChart { name: String, available: String },

    #[error("design matrix is rank deficient; collinear terms: {terms}")]
    SingularDesign { terms: String },

    #[error("insufficient data: need at least {required} observations, got {actual}")]
    InsufficientData { required: usize, actual: usize },

    #[error("ambiguous intersection: sign changes in {0:?}")]
    AmbiguousIntersection(Vec<(f64, f64)>),

    #[error("reweight split is one-sided: group `{group}` is empty at threshold {threshold}")]
    EmptyReweightGroup { group: String, threshold: f64 },

    #[error("cohort load failed: {0}")]
    Load(String),

    #[error("row {row}: {message}")]
    LoadRow { row: usize, message: String },

    #[error("all {restarts} mixture restarts collapsed (mixing weight < 1e-3 or noise sd < 1e-6)")]
    MixtureCollapse { restarts: usize },

    #[error("cross-validation fold {fold} failed: {source}")]
    FoldFailed {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate test input: {0}")]
    DegenerateTest(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("chart schema version {found} unsupported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("chart parse error: {0}")]
    ChartParse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
