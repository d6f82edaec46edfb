use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid problem or solver parameters.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Malformed input data (shapes, non-finite entries, empty samples).
    #[error("invalid input: {0}")]
    Input(String),

    /// The Gram matrix could not be factorised reliably.
    #[error("rank-deficient Gram matrix (condition estimate {condition_estimate:.3e} exceeds {threshold:.1e})")]
    RankDeficient {
        condition_estimate: f64,
        threshold: f64,
    },

    /// The learned model does not admit the requested certificate,
    /// typically because it has no nuisance support.
    #[error("certificate unavailable: {0}")]
    Certificate(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    /// A bound was requested outside the region where it holds.
    #[error("bound inapplicable: {0}")]
    BoundInapplicable(String),

    /// A closed-form expression left its real domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by numerics rather than by the caller.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::Certificate(_)
                | Error::BoundInapplicable(_)
                | Error::Domain(_)
                | Error::DegenerateDistribution(_)
                | Error::DegenerateSample(_)
                | Error::UndefinedCorrelation(_)
        )
    }
}
