use alloc::string::String;

/// Errors raised by the model, limit and simulation layers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite evaluation ({context}) at coordinate {coordinate}")]
    NonFinite {
        context: &'static str,
        coordinate: usize,
    },
    #[error("state blew up at time {time}")]
    BlowUp { time: f64 },
    #[error("degenerate model: Hörmander product has smallest singular value {lambda:e}")]
    Degenerate { lambda: f64 },
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid correlation matrix: {0}")]
    InvalidCorrelation(String),
    #[error("local volatility of asset {asset} is not positive at the initial point")]
    NotHypoelliptic { asset: usize },
    #[error("{flagged} of {total} paths produced non-finite states")]
    TooManyFlagged { flagged: usize, total: usize },
    #[error("unsupported model: {0}")]
    Unsupported(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
