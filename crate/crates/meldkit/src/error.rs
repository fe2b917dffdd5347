use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite coordinate in point {0:?}")]
    NonFinitePoint(Vec<f64>),

    #[error("point {0:?} lies outside the support of the denominator density")]
    OutOfSupport(Vec<f64>),

    #[error("log density evaluated to NaN at {0:?}")]
    NanDensity(Vec<f64>),

    #[error("empty sample: {0}")]
    EmptySample(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("initial state is outside the target support: {0:?}")]
    InitOutOfSupport(Vec<f64>),

    #[error("block `{block}` accepted no proposals during the pilot phase")]
    ZeroAcceptance { block: String },

    #[error("sampler for {label} diverged: acceptance rate {rate:.4} after warmup")]
    Divergence { label: String, rate: f64 },

    #[error("HIV link constraint violated: {0}")]
    HivConstraint(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("unknown {kind} `{name}` (available: {available})")]
    Unknown {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
