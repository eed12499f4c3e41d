use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty matrix product")]
    EmptyProduct,

    #[error("matrix is not allowable: {0}")]
    NotAllowable(String),

    #[error("power iteration did not converge within {iterations} iterations (last change {last_change:e})")]
    NoConvergence { iterations: usize, last_change: f64 },

    #[error("infinite offspring mean for type {kind}, coordinate {coord} (state {state:?})")]
    InfiniteMean { state: Option<usize>, kind: usize, coord: usize },

    #[error("sampled value exceeds the 64-bit integer range")]
    SampleOverflow,

    #[error("zero vector encountered at step {0}")]
    ZeroVector(usize),

    #[error("terminal vector must be strictly positive with unit L1 norm")]
    InvalidTerminal,

    #[error("horizon cap {cap} exceeded; best discrepancy {discrepancy:e}")]
    HorizonCapExceeded { cap: usize, discrepancy: f64 },

    #[error("direction table horizon {available} is shorter than required {required}")]
    HorizonTooShort { required: usize, available: usize },

    #[error("s = {0} is outside the finiteness interval I")]
    NotInInterval(f64),

    #[error("population count overflow at generation {0}")]
    Overflow(usize),

    #[error("environment has {available} generations, {requested} requested")]
    EnvironmentTooShort { requested: usize, available: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition not met: {0}")]
    Precondition(String),

    #[error("enumeration needs {words} words, above the cap of {cap}")]
    EnumerationTooLarge { words: f64, cap: u64 },

    #[error("malformed scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of a numerical procedure rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::ZeroVector(_)
                | Error::HorizonCapExceeded { .. }
                | Error::Overflow(_)
                | Error::SampleOverflow
                | Error::InfiniteMean { .. }
                | Error::NotAllowable(_)
                | Error::NotInInterval(_)
                | Error::EnumerationTooLarge { .. }
        )
    }
}
