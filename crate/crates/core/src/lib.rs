//! Sensor health monitoring for engine-control telemetry.
//!
//! A small autoencoder reconstructs each normalized frame; per-sensor
//! reconstruction residuals are scored against validation statistics and
//! banded into five health classes. Readings classed as defective are replaced
//! by a random-forest estimate computed from correlated peer sensors.

pub mod artifact;
pub mod autoencoder;
pub mod calibration;
pub mod catalog;
pub mod error;
pub mod forest;
pub mod metrics;
pub mod monitor;
pub mod preprocess;
pub mod synthetic;
pub mod telemetry;
pub mod training;

pub use artifact::ModelArtifact;
pub use catalog::{
    default_catalog, Dataset, HealthIndex, SensorCatalog, SensorFrame, SensorKind, SensorSpec,
    SplitDataset, Violation,
};
pub use error::{Error, Result};
pub use monitor::{MonitorPipeline, MonitorReport};
pub use training::{train_pipeline, PipelineConfig};
