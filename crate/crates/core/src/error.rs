use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {point:?} is outside the feature domain {arity:?}")]
    OutOfDomain { point: Vec<u32>, arity: Vec<u32> },

    #[error("invalid feature domain: {0}")]
    InvalidDomain(String),

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("probability vector sums to {0}, expected 1")]
    NotNormalized(f64),

    #[error("gelman-rubin is undefined: within-chain variance is zero")]
    DegenerateChains,

    #[error("projected state space of {projected:.3e} trees exceeds the limit of {limit}")]
    StateSpaceTooLarge { projected: f64, limit: usize },

    #[error("markov chain check failed: {0}")]
    MarkovInvariant(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
