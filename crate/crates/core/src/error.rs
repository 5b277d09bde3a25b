use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("duplicate point for run `{run_id}` ({split}) at {tokens} tokens: {first} vs {second}")]
    DuplicatePoint { run_id: String, split: String, tokens: u64, first: f64, second: f64 },

    #[error("curves share no token abscissae")]
    NoOverlap,

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("target loss {target} is never reached")]
    NotReached { target: f64 },

    #[error("degenerate gap: small-model baseline {small} does not exceed large-model loss {large}")]
    DegenerateGap { small: f64, large: f64 },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("profiles are not comparable: {0}")]
    MismatchedProfiles(String),

    #[error("profile is empty")]
    EmptyProfile,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("too few samples: {0}")]
    TooFewSamples(String),

    #[error("unknown run `{0}`")]
    UnknownRun(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
