use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: row {row}, column {col}: cannot parse {cell:?} as a finite number")]
    ParseCell {
        path: PathBuf,
        row: usize,
        col: usize,
        cell: String,
    },

    #[error("{path}: malformed input: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("need ≥ 2 channels, got {0}")]
    TooFewChannels(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid band {name}: {msg}")]
    InvalidBand { name: String, msg: String },

    #[error("signal too short: {len} samples, need more than {min}")]
    SignalTooShort { len: usize, min: usize },

    #[error("window of {len} samples is not divisible into {parts} sub-windows")]
    NotDivisible { len: usize, parts: usize },

    #[error("zero-magnitude analytic sample at index {0}; phase undefined")]
    ZeroMagnitude(usize),

    #[error("no non-seizure region of at least {needed_s} s available")]
    NoNonSeizureRegion { needed_s: f64 },

    #[error("class {label} has {count} samples, need at least {min}")]
    ClassTooSmall { label: u8, count: usize, min: usize },

    #[error("unstable VAR: companion spectral radius {0:.6} ≥ 1")]
    Unstable(f64),

    #[error("insufficient samples: {rows} rows for order {order} with {channels} channels")]
    InsufficientSamples { rows: usize, order: usize, channels: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("transfer matrix singular at {freq_hz:.4} Hz (condition {cond:.3e})")]
    SingularAtFrequency { freq_hz: f64, cond: f64 },

    #[error("non-positive diagonal {what}[{index}] = {value:e} at {freq_hz:.4} Hz")]
    NonPositiveDiagonal {
        what: &'static str,
        index: usize,
        value: f64,
        freq_hz: f64,
    },

    #[error("band [{low}, {high}) Hz contains no grid frequency")]
    EmptyBand { low: f64, high: f64 },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("backward called without a recorded forward pass")]
    NoForwardPass,

    #[error("loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("scheme {0} has no concat group map; relevance requires scheme 1 or 2")]
    UnsupportedScheme(u8),

    #[error("hidden neuron {0} has zero total potential")]
    ZeroColumn(usize),

    #[error("grand total relevance is zero")]
    ZeroRelevance,

    #[error("sub-window {index}: {source}")]
    SubWindow {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{field}: {source}")]
    Config {
        field: String,
        #[source]
        source: Box<Error>,
    },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn in_field(field: impl Into<String>) -> impl FnOnce(Error) -> Error {
        let field = field.into();
        move |e| Error::Config {
            field,
            source: Box::new(e),
        }
    }

    pub fn in_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| Error::Stage {
            stage,
            source: Box::new(e),
        }
    }

    /// True for errors raised by configuration checks before any work.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}
