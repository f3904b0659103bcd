use thiserror::Error;

/// Errors surfaced by the simulators and estimators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("herd shape must contain at least one particle")]
    EmptyShape,

    #[error("address label {label} at depth {depth} is out of range for degree {d}")]
    BadAddress { label: u8, depth: usize, d: u32 },

    #[error("edge above {0} is not an active edge of the shape")]
    InactiveEdge(String),

    #[error("malformed canonical code: {0}")]
    BadCode(String),

    #[error("number of half-edges n*d = {0} is odd")]
    OddHalfEdges(usize),

    #[error("switch code refers to an edge not present in the matching")]
    StaleEdge,

    #[error("explored state is not a forest")]
    NotForest,

    #[error("coupling rate table inconsistent: {0}")]
    RateInconsistency(String),

    #[error("event cap of {0} events reached")]
    EventCap(u64),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
