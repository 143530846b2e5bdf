use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("beta = {beta} outside the admissible range |beta| <= {beta_max}")]
    BetaOutOfRange { beta: f64, beta_max: f64 },
    #[error("invalid disorder law: {0}")]
    InvalidLaw(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("horizon {requested} exceeds field horizon {available}")]
    HorizonExceeded { requested: usize, available: usize },
    #[error("start point is not inside the field cone at time {time}")]
    PointOutsideField { time: usize },
    #[error("path leaves the field cone at step {step}")]
    PathOutsideField { step: usize },
    #[error("{count} paths exceed the enumeration cap {cap}")]
    TooManyPaths { count: u128, cap: u128 },
    #[error("tree with {nodes} nodes exceeds the exact-mode cap {cap}")]
    TreeTooLarge { nodes: u128, cap: u128 },
    #[error("enumeration of {count} terms exceeds the cap {cap}")]
    EnumerationTooLarge { count: u128, cap: u128 },
    #[error("{0} spins exceed the enumeration cap")]
    TooManySpins(usize),
    #[error("sample batch contains negative values")]
    NegativeValues,
    #[error("sample batch contains non-positive values")]
    NonPositiveValues,
    #[error("sample batch contains non-finite values")]
    NonFinite,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("configuration has {got} spins, model has {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("spin value {0} is not +1 or -1")]
    BadSpin(f64),
    #[error("beta levels must increase: {current} -> {next}")]
    NonIncreasingBeta { current: f64, next: f64 },
    #[error("endpoint {endpoint} is unreachable in {horizon} steps")]
    UnreachableEndpoint { endpoint: i64, horizon: usize },
    #[error("invalid test grid: {0}")]
    InvalidGrid(String),
    #[error("test function takes a negative value")]
    NegativeTestFunction,
}
