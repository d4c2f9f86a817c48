use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("token not in vocabulary: {0:?}")]
    UnknownToken(String),

    #[error("cannot train a language model on an empty corpus")]
    EmptyCorpus,

    #[error("scorer unavailable: {0}")]
    ScorerUnavailable(String),

    #[error("scorer protocol error: {0}")]
    Protocol(String),

    #[error("input too short for the requested move: {0}")]
    DegenerateInput(String),

    #[error("invalid k-opt move: {0}")]
    MoveInvalid(String),

    #[error("instance of size {size} exceeds the limit of {max}")]
    TooLarge { size: usize, max: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("sequences are not permutations of the same bag")]
    BagMismatch,

    #[error("inconsistent generation constraints: {0}")]
    InvalidConstraints(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the external scoring backend rather than of the input.
    pub fn is_scorer_failure(&self) -> bool {
        matches!(self, Error::ScorerUnavailable(_) | Error::Protocol(_))
    }
}
