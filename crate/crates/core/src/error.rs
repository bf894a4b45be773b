use std::time::Duration;

use thiserror::Error;

use crate::field::PartyId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,

    #[error("multiplicative shares must be nonzero")]
    ZeroMulShare,

    #[error("value {0} does not fit the fixed-point range")]
    EncodeOverflow(f64),

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("no shares supplied")]
    MissingShares,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("index {index} out of range for {bound} nodes")]
    IndexOutOfRange { index: usize, bound: usize },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("{pool} exhausted: requested {requested}, {available} left")]
    PoolExhausted {
        pool: &'static str,
        requested: usize,
        available: usize,
    },

    #[error("correlated randomness reused: {0}")]
    Reuse(String),

    #[error("request for {requested} rows exceeds the triple capacity of {max}")]
    OversizeRequest { requested: usize, max: usize },

    #[error("timed out after {after:?} waiting for party {peer}")]
    Timeout { peer: PartyId, after: Duration },

    #[error("party {peer} disconnected")]
    Disconnected { peer: PartyId },

    #[error("corrupt frame: {0}")]
    Frame(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures raised by the network layer or a misbehaving peer.
    pub fn is_protocol_abort(&self) -> bool {
        matches!(
            self,
            Error::Timeout { .. }
                | Error::Disconnected { .. }
                | Error::Frame(_)
                | Error::Protocol(_)
                | Error::PoolExhausted { .. }
                | Error::Reuse(_)
        )
    }
}
