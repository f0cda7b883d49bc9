use thiserror::Error;

/// Errors raised by the toolkit.
///
/// Variants are grouped so that front ends can map them onto exit codes:
/// input/config problems versus numerical failures (see [`Error::is_numerical`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("missing column `{0}` in input header")]
    MissingColumn(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("lag bound {max_lag} too large for series of length {len}")]
    LagTooLarge { max_lag: usize, len: usize },

    #[error("length mismatch: {0}")]
    ShapeMismatch(String),

    #[error("statistic undefined: {0}")]
    Undefined(String),

    #[error("data has a single day; pass an explicit in-sample flag (split = none)")]
    SingleDay,

    #[error("label invariant violated on day {date} at event {index}: {reason}")]
    LabelInvariant {
        date: String,
        index: usize,
        reason: String,
    },

    #[error("linear system ill-conditioned (condition estimate {cond:.3e})")]
    IllConditioned { cond: f64 },

    #[error("linear system singular")]
    Singular,

    #[error("unsupported model kind for this operation: {0}")]
    UnsupportedModel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::IllConditioned { .. } | Error::Singular | Error::Undefined(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
