//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("prefix family mismatch: {0}")]
    FamilyMismatch(String),

    #[error("update stream out of order at line {line}: ts {ts} behind high-water {high} beyond slack {slack}")]
    OutOfOrder {
        line: usize,
        ts: i64,
        high: i64,
        slack: i64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("AS {0} absent from graph and metadata")]
    UnknownAs(u32),

    #[error("segment {index}/{total} for AS {asn} is {len} chars, over the {limit}-char limit")]
    SegmentTooLong {
        asn: u32,
        index: usize,
        total: usize,
        len: usize,
        limit: usize,
    },

    #[error("store dimension {store} does not match expected {expected}")]
    DimMismatch { store: usize, expected: usize },

    #[error("insufficient supervision: need at least two organizations with two or more embedded ASes each")]
    InsufficientSupervision,

    #[error("empty {side} pair set; intra-org distance histogram: {histogram}")]
    EmptyPairSet {
        side: &'static str,
        histogram: String,
    },

    #[error("training diverged at iteration {iteration}: loss is not finite")]
    Divergence { iteration: usize },

    #[error("embedding unresolvable for AS {0} and fallback is disabled")]
    UnresolvedAsn(u32),

    #[error("cleaned paths start at different ASes (vantage mismatch)")]
    VantageMismatch,

    #[error("provider error for AS {asn}: {source}")]
    Provider {
        asn: u32,
        source: crate::embedder::ProviderError,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
