use std::path::PathBuf;

use thiserror::Error;

use crate::graph::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    Invalid(ValidationReport),

    #[error("shape mismatch at node {node}: {detail}")]
    ShapeMismatch { node: String, detail: String },

    #[error("dtype mismatch at {location}: {detail}")]
    DTypeMismatch { location: String, detail: String },

    #[error("malformed model {path}: {location}: {detail}")]
    Manifest {
        path: PathBuf,
        location: String,
        detail: String,
    },

    #[error("blob length mismatch at {location}: {detail}")]
    BlobLength { location: String, detail: String },

    #[error("unsupported op kind {kind:?} at {location}")]
    UnsupportedOp { kind: String, location: String },

    #[error("missing quantization parameters for tensor {0}")]
    MissingQuantParams(String),

    #[error("missing calibration range for tensor {0}")]
    MissingRange(String),

    #[error("accumulator overflow in node {node}: value {value} does not fit in 32 bits")]
    AccumulatorOverflow { node: String, value: i64 },

    #[error("calibration set is empty")]
    EmptyCalibrationSet,

    #[error("label {label} of sample {sample} is outside the {classes} model classes")]
    LabelOutOfRange {
        sample: String,
        label: usize,
        classes: usize,
    },

    #[error("pruning error: {0}")]
    Prune(String),

    #[error("checkpoint mismatch at tensor {tensor}: {detail}")]
    Checkpoint { tensor: String, detail: String },

    #[error("mapping requires a quantized graph ({0})")]
    NotQuantized(String),

    #[error("invalid configuration: {field}: {detail}")]
    Config { field: String, detail: String },

    #[error("downlink: {0}")]
    Downlink(String),

    #[error("dataset {path}: {detail}")]
    Dataset { path: PathBuf, detail: String },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            detail: detail.into(),
        }
    }

    /// Wraps an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
