use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = IbmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum IbmError {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("matrix data length {len} does not match {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },

    #[error("non-finite entry at ({row}, {col}) in {context}")]
    NonFinite {
        context: &'static str,
        row: usize,
        col: usize,
    },

    #[error("empty input in {0}")]
    Empty(&'static str),

    #[error("standard deviation must be non-negative, got {0}")]
    NegativeStddev(f64),

    #[error("singular value spectrum is all zero")]
    ZeroSpectrum,

    #[error("threshold delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),

    #[error("no head or artifact for task {0}")]
    UnknownTask(usize),

    #[error("task {0} has already been finalized")]
    DuplicateTask(usize),

    #[error("forward cache does not match the layer: {0}")]
    StaleCache(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("layer {layer} has no free and no selected weights; cannot start task {task}")]
    CapacityExhausted { layer: usize, task: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed IDX data at byte {offset}: {reason}")]
    Idx { offset: usize, reason: String },

    #[error("malformed pool file at byte {offset}: {reason}")]
    PoolFormat { offset: usize, reason: String },

    #[error("unsupported pool version {found:?}, expected {expected:?}")]
    PoolVersion { expected: String, found: String },

    #[error("pool checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    PoolChecksum { stored: u64, computed: u64 },

    #[error("malformed run report: {0}")]
    Report(String),

    #[error("task {task}: {source}")]
    InTask {
        task: usize,
        #[source]
        source: Box<IbmError>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IbmError {
    pub(crate) fn in_task(self, task: usize) -> Self {
        match self {
            e @ IbmError::InTask { .. } => e,
            e => IbmError::InTask {
                task,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IbmError::Io {
            path: path.into(),
            source,
        }
    }
}
