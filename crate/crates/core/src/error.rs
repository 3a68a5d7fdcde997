use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("time keys must be strictly increasing")]
    UnsortedTimes,
    #[error("time key {0} is already stored")]
    DuplicateTime(String),
    #[error("a path cannot mix exact-exponent and raw time keys")]
    MixedKeyKinds,
    #[error("no stored right neighbour for time {0}")]
    NoRightNeighbor(String),
    #[error("keys {0} and {1} are not adjacent stored times")]
    NonAdjacentKeys(String, String),
    #[error("grid time {0} is not stored in the path")]
    MissingGridTime(String),
    #[error("coordinate index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("Gram system is rank deficient (condition estimate {condition:e})")]
    RankDeficient { condition: f64 },
    #[error("coordinate blocks need {needed} indices but dimension is {available}")]
    BlockBudgetExceeded { needed: usize, available: usize },
    #[error("constant {0} must be positive and finite")]
    NonPositiveConstant(&'static str),
    #[error("block J(k={k}, l={l}) has {size} coordinates, needs at least {needed}")]
    BlockTooSmall { k: usize, l: usize, size: usize, needed: usize },
    #[error("path grid is coarser than refinement level {0}")]
    GridTooCoarse(usize),
    #[error("point {0} is the origin")]
    ZeroPoint(usize),
    #[error("iteration limit {0} reached")]
    IterationLimit(usize),
    #[error("certificate failed its re-check against the input: {0}")]
    CertificateInvalid(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
