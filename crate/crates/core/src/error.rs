use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid auction: {0}")]
    InvalidAuction(String),
    #[error("allocation {alloc:?} is not feasible for n={n}, k={k}")]
    Infeasible { alloc: Vec<usize>, n: usize, k: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("value {value} is outside the support of {dist}")]
    OutsideSupport { value: f64, dist: String },
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error(
        "enumerating {count} allocations (n={n}, k={k}) exceeds the cap of {cap}; use fewer candidates or slots"
    )]
    EnumerationCap { n: usize, k: usize, count: u128, cap: u64 },
    #[error("VCG needs at least k+1 candidates to price a winner (n={n}, k={k})")]
    TooFewCandidates { n: usize, k: usize },
    #[error("dataset line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("model: {0}")]
    Model(#[source] Box<dyn std::error::Error + Send + Sync>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
