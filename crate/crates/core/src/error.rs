use thiserror::Error;

/// Errors produced by validation, sampling, and summarization.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("column {name:?} is constant and cannot be standardized")]
    ConstantColumn { name: String },

    #[error("missing or non-numeric value in row {row}, column {column:?}")]
    MissingValue { row: usize, column: String },

    #[error("row counts differ: values file has {values} rows, metadata has {meta}")]
    RowCountMismatch { values: usize, meta: usize },

    #[error("individual {individual:?}: time indices must be consecutive starting at 1")]
    NonConsecutiveTime { individual: String },

    #[error("individual {individual:?}: disease label must be constant within the series")]
    InconsistentDisease { individual: String },

    #[error("row {row}: disease label must be 0 or 1")]
    InvalidDisease { row: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("cluster index {index} out of range (K = {k})")]
    ClusterOutOfRange { index: usize, k: usize },

    #[error("state path violates the monotone unit-step constraint")]
    InvalidStatePath,

    #[error("inconsistent neighbor states at time {t}: internal state corrupted")]
    CorruptNeighborStates { t: usize },

    #[error("instance too large for exhaustive path enumeration (requires T <= 12, S <= 6)")]
    EnumerationTooLarge,

    #[error("X cluster {0} is already matched")]
    AlreadyMatched(usize),

    #[error("X cluster {0} has no link to break")]
    LinkAbsent(usize),

    #[error("empty trace")]
    EmptyTrace,

    #[error("insufficient rounds for the joint-distribution test: {0}")]
    InsufficientRounds(usize),

    #[error("log joint became non-finite at sweep {sweep}: {diagnostic}")]
    NonFiniteLogJoint { sweep: usize, diagnostic: String },
}

pub type Result<T> = core::result::Result<T, Error>;
