use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed schema: {0}")]
    MalformedSchema(String),
    #[error("unknown schema path: {0:?}")]
    UnknownPath(Vec<String>),
    #[error("schema depth {depth} exceeds maximum {max}")]
    SchemaTooDeep { depth: usize, max: usize },
    #[error("schema invariant violated: {0}")]
    InvariantViolation(String),

    #[error("empty corpus")]
    EmptyCorpus,
    #[error("span ({start}, {end}) out of bounds for text of {len} chars")]
    OutOfBounds { start: usize, end: usize, len: usize },
    #[error("malformed vocabulary file: {0}")]
    MalformedVocab(String),

    #[error("no candidate types for query group {0}")]
    EmptyTypeSet(usize),
    #[error("prompt of {needed} tokens exceeds budget {budget}")]
    PromptOverflow { needed: usize, budget: usize },
    #[error("query of {needed} positions exceeds max_len {max_len}")]
    QueryTooLong { needed: usize, max_len: usize },
    #[error("span ({start}, {end}) does not align to token boundaries")]
    MisalignedSpan { start: usize, end: usize },
    #[error("gold type {0:?} is not a candidate of its group")]
    UnknownGoldType(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("scoring head dimension {0} is odd")]
    OddHeadDim(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("query has no classification candidates")]
    NoCandidates,
    #[error("malformed score grid: {0}")]
    MalformedGrid(String),
    #[error("no oracle score for query: {0}")]
    MissingOracleScore(String),

    #[error("malformed record at line {line}: {msg}")]
    MalformedRecord { line: usize, msg: String },
    #[error("offset ({start}, {end}) out of range for text of {len} chars at line {line}")]
    OffsetOutOfRange {
        line: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("unknown task {0:?}")]
    UnknownTask(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{what} not found: {path}")]
    NotFound { what: &'static str, path: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Module-qualified error code, e.g. `schema::MalformedSchema`.
    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            MalformedSchema(_) => "schema::MalformedSchema",
            UnknownPath(_) => "schema::UnknownPath",
            SchemaTooDeep { .. } => "schema::SchemaTooDeep",
            InvariantViolation(_) => "schema::InvariantViolation",
            EmptyCorpus => "tokenize::EmptyCorpus",
            OutOfBounds { .. } => "tokenize::OutOfBounds",
            MalformedVocab(_) => "tokenize::MalformedVocab",
            EmptyTypeSet(_) => "query::EmptyTypeSet",
            PromptOverflow { .. } => "query::PromptOverflow",
            QueryTooLong { .. } => "query::QueryTooLong",
            MisalignedSpan { .. } => "query::MisalignedSpan",
            UnknownGoldType(_) => "query::UnknownGoldType",
            DimensionMismatch(_) => "model::DimensionMismatch",
            OddHeadDim(_) => "model::OddHeadDim",
            ShapeMismatch(_) => "model::ShapeMismatch",
            CheckpointMismatch(_) => "model::CheckpointMismatch",
            MalformedCheckpoint(_) => "model::MalformedCheckpoint",
            NoCandidates => "decode::NoCandidates",
            MalformedGrid(_) => "decode::MalformedGrid",
            MissingOracleScore(_) => "decode::MissingOracleScore",
            MalformedRecord { .. } => "data::MalformedRecord",
            OffsetOutOfRange { .. } => "data::OffsetOutOfRange",
            UnknownTask(_) => "metrics::UnknownTask",
            InvalidConfig(_) => "cli::InvalidConfig",
            NotFound { .. } => "cli::NotFound",
            Io(_) => "io::Io",
        }
    }
}
