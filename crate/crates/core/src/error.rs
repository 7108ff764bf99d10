use thiserror::Error;

use crate::model::NodeId;

/// Errors raised by the model, the slot engine and the protocol state machines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("duplicate node id {0}")]
    DuplicateId(NodeId),

    #[error("network has no nodes")]
    EmptyNetwork,

    #[error("nodes {0} and {1} share a position")]
    CoincidentNodes(NodeId, NodeId),

    #[error("unknown node id {0}")]
    UnknownNode(NodeId),

    /// A structural property the model guarantees was found broken.
    #[error("model violation: {0}")]
    ModelViolation(String),

    #[error("protocol violation at slot {slot} by node {node}: {reason}")]
    ProtocolViolation {
        node: NodeId,
        slot: u64,
        reason: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn protocol(node: NodeId, slot: u64, reason: impl Into<String>) -> Self {
        Error::ProtocolViolation {
            node,
            slot,
            reason: reason.into(),
        }
    }
}
