//! Error types shared across the crate.

use thiserror::Error;

/// Everything that can go wrong between raw signal files and a final report.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A teacher signal contained non-finite or out-of-range values.
    #[error("invalid signal for {id}: {reason}")]
    InvalidSignal { id: String, reason: String },

    /// Not enough data to perform the requested operation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A configuration value violates its documented range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Tensor or batch dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A loss was evaluated on an empty batch.
    #[error("empty batch: {0}")]
    EmptyBatch(String),

    /// A supervision pair references an id with no score.
    #[error("dangling pair reference: no score for {id}")]
    DanglingPair { id: String },

    /// A mini-batch cannot support the requested loss (too small or constant labels).
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    /// A correlation metric is undefined on the given vectors.
    #[error("degenerate metric: {0}")]
    DegenerateMetric(String),

    /// A least-squares fit has no unique solution.
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// Training produced non-finite values.
    #[error("training diverged at step {step}: {reason}")]
    TrainingDivergence { step: u64, reason: String },

    /// Calibration was requested without any labeled ids.
    #[error("missing labels: {0}")]
    MissingLabels(String),

    /// A label budget > 0 rounded down to zero ids.
    #[error("label budget too small: {0}")]
    BudgetTooSmall(String),

    /// A data file failed to parse.
    #[error("format error in {file} at line {line}, column {column}: {message}")]
    Format {
        file: String,
        line: u64,
        column: u64,
        message: String,
    },

    /// An id in one file is unknown to another.
    #[error("reference error: {referencing} mentions id {id} not present in {defining}")]
    Reference {
        referencing: String,
        defining: String,
        id: String,
    },

    /// A required run artifact (checkpoint, log) does not exist.
    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    /// One run of a multi-seed repetition failed; identifies the seed.
    #[error("run with seed {seed} failed: {source}")]
    SeedRun {
        seed: u64,
        #[source]
        source: Box<CoreError>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}
