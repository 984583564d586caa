use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("malformed case JSON: {0}")]
    MalformedJson(String),
    #[error("unsupported schema version {0} (expected 1)")]
    Version(u32),
    #[error("missing slack bus")]
    MissingSlack,
    #[error("{0} slack buses declared, exactly one required")]
    MultipleSlack(usize),
    #[error("duplicate bus id {0}")]
    DuplicateBus(usize),
    #[error("nonpositive reactance x = {x} on branch {branch}")]
    NonpositiveReactance { branch: usize, x: f64 },
    #[error("dangling branch endpoint: branch {branch} references unknown bus {bus}")]
    DanglingEndpoint { branch: usize, bus: usize },
    #[error("unknown bus id {0}")]
    UnknownBus(usize),
    #[error("invalid generator {index}: {reason}")]
    InvalidGenerator { index: usize, reason: String },
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("injections are unbalanced (sum = {0:e})")]
    Unbalanced(f64),
    #[error("network is disconnected")]
    Disconnected,
    #[error("singular system: {0}")]
    Singular(String),
    #[error("rank-deficient system: rank {rank} < {needed}")]
    RankDeficient { rank: usize, needed: usize },
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("invalid location: {0}")]
    InvalidLocation(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("instance too large: {0}")]
    TooLarge(String),
}

pub type Result<T> = std::result::Result<T, GridError>;
