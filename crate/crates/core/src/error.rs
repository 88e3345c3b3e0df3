use std::path::PathBuf;

use crate::catalog::Violation;

/// Errors produced by the sensor health engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dataset has {found} frames, at least {required} are required")]
    TooFewFrames { found: usize, required: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("batch is empty")]
    EmptyBatch,

    #[error("sample set is empty")]
    EmptySamples,

    #[error("expected a vector of length {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },

    #[error("sensor {sensor} has zero variance, R² is undefined")]
    ConstantTarget { sensor: usize },

    #[error("{found} residual samples, at least 2 are required")]
    TooFewSamples { found: usize },

    #[error("residual {0} is negative")]
    NegativeResidual(f64),

    #[error("invalid peer feature count {k} (must be within 1..={max})")]
    InvalidK { k: usize, max: usize },

    #[error("unknown sensor id {0}")]
    UnknownSensor(usize),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("frame rejected: {}", format_violations(.0))]
    FrameRejected(Vec<Violation>),

    #[error("catalog fingerprint mismatch: artifact {artifact}, catalog {catalog}")]
    FingerprintMismatch { artifact: String, catalog: String },

    #[error("unsupported artifact format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("malformed telemetry at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Tags an error with the pipeline stage that produced it.
pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|source| Error::Stage {
            stage,
            source: Box::new(source),
        })
    }
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}
