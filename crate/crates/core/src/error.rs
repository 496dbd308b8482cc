use thiserror::Error;

/// Errors produced by parsing, consensus building, metrics and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("reference error: {0}")]
    Reference(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("duplicate id: {0}")]
    DuplicateId(String),
    #[error("points belong to different images ({0} vs {1})")]
    CrossImage(String, String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown rater: {0}")]
    UnknownRater(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("ground truths cover different image sets: {0}")]
    ImageSetMismatch(String),
    #[error("cannot place {wanted} points with the required separation (placed {placed})")]
    Saturation { wanted: usize, placed: usize },
    #[error("infeasible request: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for errors caused by the caller's configuration rather than
    /// malformed input data.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::UnknownRater(_) | Error::Infeasible(_) | Error::Saturation { .. }
        )
    }
}
