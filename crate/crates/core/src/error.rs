use crate::pool::SampleId;

/// Errors raised across scoring, diagnostics, training, and file handling.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("class {class} mean has zero norm; unit normalization is undefined")]
    ZeroNormMean { class: usize },

    #[error("sample {0} is not present in the feature matrix")]
    MissingSample(SampleId),

    #[error("duplicate sample id {0}")]
    DuplicateId(SampleId),

    #[error("sample {0} is already labeled")]
    AlreadyLabeled(SampleId),

    #[error("sample {0} is not part of the pool")]
    UnknownSample(SampleId),

    #[error("class {class} is outside [0, {num_classes})")]
    UnknownClass { class: usize, num_classes: usize },

    #[error("need at least 2 present classes, found {present}")]
    TooFewClasses { present: usize },

    #[error("need at least 2 checkpoints, found {found}")]
    TooFewCheckpoints { found: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("requested {k} samples from a pool of {pool}")]
    BudgetExceedsPool { k: usize, pool: usize },

    #[error("between-class variability vanishes (all class means coincide)")]
    DegenerateBetween,

    #[error("non-finite value in input: {0}")]
    NonFiniteInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    DivergedTraining { epoch: usize },

    #[error("scoring candidate {id}: {source}")]
    Candidate {
        id: SampleId,
        #[source]
        source: Box<Error>,
    },

    #[error("cycle {cycle}: {source}")]
    Cycle {
        cycle: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("bad magic bytes {found:?}, expected \"NCF1\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },

    #[error("non-finite value at byte offset {offset} (row {row}, column {col})")]
    NonFiniteValue { offset: usize, row: usize, col: usize },

    #[error("index mismatch: {0}")]
    IndexMismatch(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn for_candidate(self, id: SampleId) -> Self {
        Error::Candidate {
            id,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_cycle(self, cycle: usize) -> Self {
        Error::Cycle {
            cycle,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
