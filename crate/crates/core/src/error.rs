use chrono::{DateTime, Utc};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("duplicate edge {from} -> {to}")]
    DuplicateEdge { from: String, to: String },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid rating curve: {0}")]
    InvalidCurve(String),

    #[error("no rating-curve segment covers {0}")]
    UncoveredPeriod(DateTime<Utc>),

    #[error("stage {stage} ft at or below curve offset {offset} ft")]
    BelowOffset { stage: f64, offset: f64 },

    #[error("discharge {0} cfs is outside the invertible domain")]
    FlowDomain(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
