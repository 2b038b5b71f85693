use std::io;

use crate::transport::MsgType;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("value out of range: {0}")]
    Range(String),

    #[error("invalid parameters: {0}")]
    Params(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("decryption integrity failure: {0}")]
    Integrity(String),

    #[error("triplet supply exhausted: need {needed}, {available} remain")]
    TripletExhausted { needed: usize, available: usize },

    #[error("triplet range {start}..{end} was already consumed")]
    TripletReuse { start: usize, end: usize },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("unexpected frame: wanted {expected:?}, got {got:?}")]
    UnexpectedFrame { expected: MsgType, got: MsgType },

    #[error("handshake rejected on field `{0}`")]
    HandshakeRejected(String),

    #[error("peer aborted session: {0}")]
    Aborted(String),

    #[error("pipeline stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("channel closed")]
    ChannelClosed,

    #[error("garbled evaluation failed: {0}")]
    Garbling(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
