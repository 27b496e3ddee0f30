use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vocabulary is frozen; cannot intern unseen item {0:?}")]
    FrozenVocabulary(String),

    #[error("invalid record {record_id:?}: {reason}")]
    InvalidRecord { record_id: String, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed database at line {line}: {reason}")]
    MalformedDatabase { line: usize, reason: String },

    #[error("malformed codebook: {0}")]
    MalformedCodebook(String),

    #[error("malformed report at line {line}: {reason}")]
    MalformedReport { line: usize, reason: String },

    #[error("invalid grid dimension {rows}x{cols}")]
    InvalidDimension { rows: usize, cols: usize },

    #[error("invalid attention map: {0}")]
    InvalidAttention(String),

    #[error("attention map has zero total mass")]
    ZeroMass,

    #[error("tau must lie in (0, 1], got {0}")]
    InvalidTau(f64),

    #[error("need at least {needed} feature vectors, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid codebook configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown item id {0}")]
    UnknownItem(u32),

    #[error("invalid support threshold: {0}")]
    InvalidThreshold(String),

    #[error("invalid confidence threshold: {0}")]
    InvalidConfidence(String),

    #[error("oracle item universe of {items} exceeds cap {cap}")]
    OracleTooLarge { items: usize, cap: usize },

    #[error("frequent itemsets are incomplete: {0}")]
    IncompleteLattice(String),

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("invalid report format {0:?}")]
    InvalidFormat(String),
}

impl Error {
    /// Short stable label, used to bucket skipped records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::FrozenVocabulary(_) => "frozen_vocabulary",
            Error::InvalidRecord { .. } => "invalid_record",
            Error::Io(_) => "io",
            Error::MalformedDatabase { .. } => "malformed_database",
            Error::MalformedCodebook(_) => "malformed_codebook",
            Error::MalformedReport { .. } => "malformed_report",
            Error::InvalidDimension { .. } => "invalid_dimension",
            Error::InvalidAttention(_) => "invalid_attention",
            Error::ZeroMass => "zero_mass",
            Error::InvalidTau(_) => "invalid_tau",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidConfig(_) => "invalid_config",
            Error::UnknownItem(_) => "unknown_item",
            Error::InvalidThreshold(_) => "invalid_threshold",
            Error::InvalidConfidence(_) => "invalid_confidence",
            Error::OracleTooLarge { .. } => "oracle_too_large",
            Error::IncompleteLattice(_) => "incomplete_lattice",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::InvalidFormat(_) => "invalid_format",
        }
    }
}
