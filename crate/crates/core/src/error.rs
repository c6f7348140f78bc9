//! Crate-wide error type.

use alloc::string::String;

/// Convenience alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Incompatible matrix or vector dimensions.
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A numeric precondition (sign, range, finiteness) was violated.
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    /// Input rows were required to sum to one and do not.
    #[error("{op} requires row-stochastic input: {detail}")]
    NotStochastic { op: &'static str, detail: String },

    /// Invalid raw buffers passed to a constructor.
    #[error("invalid construction: {0}")]
    Construction(String),

    #[error("channel {channel} out of range ({channels} channels)")]
    ChannelOutOfRange { channel: usize, channels: usize },

    #[error("node {node} out of range ({n_nodes} nodes)")]
    NodeOutOfRange { node: usize, n_nodes: usize },

    #[error("label {label} invalid for node {node} ({n_classes} classes)")]
    InvalidLabel {
        node: usize,
        label: i64,
        n_classes: usize,
    },

    #[error("empty {what}")]
    Empty { what: &'static str },

    /// Non-finite gradient encountered during an optimizer step.
    #[error("non-finite gradient in {key} at flat index {index}: {value}")]
    NonFiniteGradient {
        key: String,
        index: usize,
        value: f64,
    },

    /// Meta-path enumeration would exceed the tractability guard.
    #[error("meta-path enumeration of {candidates}^{steps} sequences exceeds limit {limit}")]
    EnumerationTooLarge {
        candidates: usize,
        steps: usize,
        limit: u64,
    },

    /// An explicit product grew past the caller-supplied budget.
    #[error("sparse product exceeded nnz budget {budget}")]
    ProductBudget { budget: usize },

    #[error("identity candidate required but absent")]
    MissingIdentity,

    /// Model parameters are inconsistent with the graph or hyper block.
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
}
