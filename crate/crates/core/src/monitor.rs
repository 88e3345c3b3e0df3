//! Frame-by-frame health monitoring.
//!
//! For each raw frame the pipeline normalizes, reconstructs through the
//! autoencoder, scores every sensor's residual against the residual profile
//! and, for sensors classed Defective, substitutes a forest estimate computed
//! from the other sensors. Substituted values are reported only; they never
//! feed back into later frames.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autoencoder::AutoencoderModel;
use crate::calibration::{band, ResidualProfile};
use crate::catalog::{structural_violations, HealthIndex, SensorCatalog, SensorFrame};
use crate::error::{Error, Result};
use crate::forest::ForestBank;
use crate::preprocess::NormalizationParams;
use crate::synthetic::Detections;

pub const DEFAULT_ALERT_THRESHOLD: HealthIndex = HealthIndex::AlmostDefective;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReport {
    pub sensor_id: usize,
    /// Reading as received, in physical units.
    pub raw_value: f64,
    /// Autoencoder reconstruction, in physical units.
    pub reconstructed_value: f64,
    /// Absolute normalized reconstruction error.
    pub residual: f64,
    /// Distance of the residual from the profile mean, in standard deviations.
    /// Infinite when the profile has zero spread and the residual is off the
    /// mean; written as `null` in JSON.
    #[serde(with = "extended_float")]
    pub z_band: f64,
    pub health: HealthIndex,
    /// Forest estimate in physical units, present only for Defective sensors.
    pub substituted_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub sensor_id: usize,
    pub health: HealthIndex,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub timestamp_ms: i64,
    pub sensors: Vec<SensorReport>,
    pub alerts: Vec<Alert>,
}

/// One entry of a monitored stream: a report or a per-frame failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
pub enum StreamRecord {
    Report(MonitorReport),
    Error {
        /// Zero-based position in the input stream.
        index: usize,
        timestamp_ms: Option<i64>,
        message: String,
    },
}

/// The fitted components needed to score frames. Immutable once built.
#[derive(Debug, Clone)]
pub struct MonitorPipeline {
    catalog: Arc<SensorCatalog>,
    normalizer: NormalizationParams,
    autoencoder: AutoencoderModel,
    profile: ResidualProfile,
    forests: ForestBank,
    alert_threshold: HealthIndex,
}

impl MonitorPipeline {
    pub fn new(
        catalog: Arc<SensorCatalog>,
        normalizer: NormalizationParams,
        autoencoder: AutoencoderModel,
        profile: ResidualProfile,
        forests: ForestBank,
    ) -> Result<Self> {
        let width = catalog.len();
        autoencoder.check_shape()?;
        let sizes = [
            normalizer.len(),
            autoencoder.input_dim(),
            autoencoder.output_dim(),
            profile.len(),
        ];
        if let Some(&bad) = sizes.iter().find(|&&n| n != width) {
            return Err(Error::LengthMismatch {
                left: bad,
                right: width,
            });
        }
        forests.check(width)?;
        Ok(Self {
            catalog,
            normalizer,
            autoencoder,
            profile,
            forests,
            alert_threshold: DEFAULT_ALERT_THRESHOLD,
        })
    }

    pub fn with_alert_threshold(mut self, threshold: HealthIndex) -> Self {
        self.alert_threshold = threshold;
        self
    }

    pub fn alert_threshold(&self) -> HealthIndex {
        self.alert_threshold
    }

    pub fn catalog(&self) -> &SensorCatalog {
        &self.catalog
    }

    pub fn normalizer(&self) -> &NormalizationParams {
        &self.normalizer
    }

    pub fn autoencoder(&self) -> &AutoencoderModel {
        &self.autoencoder
    }

    pub fn profile(&self) -> &ResidualProfile {
        &self.profile
    }

    pub fn forests(&self) -> &ForestBank {
        &self.forests
    }

    /// Scores one raw frame. Out-of-range readings are accepted; wrong length
    /// or non-finite values reject the frame.
    pub fn process_frame(&self, frame: &SensorFrame) -> Result<MonitorReport> {
        let violations = structural_violations(frame, &self.catalog);
        if !violations.is_empty() {
            return Err(Error::FrameRejected(violations));
        }
        let x = self.normalizer.normalize(&frame.values);
        let recon = self.autoencoder.forward(&x)?;

        let mut sensors = Vec::with_capacity(x.len());
        let mut alerts = Vec::new();
        for (s, spec) in self.catalog.sensors().iter().enumerate() {
            let residual = (x[s] - recon[s]).abs();
            let stats = self.profile.sensors[s];
            let z = stats.z_score(residual);
            let health = if stats.sigma == 0.0 {
                stats.classify(residual)?
            } else {
                band(z)
            };
            let substituted_value = (health == HealthIndex::Defective).then(|| {
                self.normalizer
                    .denormalize_value(s, self.forests.predict(s, &x))
            });
            if health >= self.alert_threshold {
                alerts.push(Alert {
                    sensor_id: s,
                    health,
                    message: format!(
                        "{} is {health}: residual {residual:.6} at {z:.2} sigma",
                        spec.name
                    ),
                });
            }
            sensors.push(SensorReport {
                sensor_id: s,
                raw_value: frame.values[s],
                reconstructed_value: self.normalizer.denormalize_value(s, recon[s]),
                residual,
                z_band: z,
                health,
                substituted_value,
            });
        }
        Ok(MonitorReport {
            timestamp_ms: frame.timestamp_ms,
            sensors,
            alerts,
        })
    }

    /// Maps [`process_frame`](Self::process_frame) over a frame source in
    /// order. Read errors and rejected frames become error records and the
    /// stream continues.
    pub fn process_stream<'a, I>(&'a self, frames: I) -> impl Iterator<Item = StreamRecord> + 'a
    where
        I: IntoIterator<Item = Result<SensorFrame>>,
        I::IntoIter: 'a,
    {
        frames
            .into_iter()
            .enumerate()
            .map(move |(index, item)| match item {
                Ok(frame) => match self.process_frame(&frame) {
                    Ok(report) => StreamRecord::Report(report),
                    Err(e) => StreamRecord::Error {
                        index,
                        timestamp_ms: Some(frame.timestamp_ms),
                        message: e.to_string(),
                    },
                },
                Err(e) => StreamRecord::Error {
                    index,
                    timestamp_ms: None,
                    message: e.to_string(),
                },
            })
    }
}

/// Defective flags and substitutions of a report sequence, for benchmarking.
pub fn detections(reports: &[MonitorReport]) -> Detections {
    Detections {
        defective: reports
            .iter()
            .map(|r| {
                r.sensors
                    .iter()
                    .map(|s| s.health == HealthIndex::Defective)
                    .collect()
            })
            .collect(),
        substituted: reports
            .iter()
            .map(|r| r.sensors.iter().map(|s| s.substituted_value).collect())
            .collect(),
    }
}

/// JSON has no infinity; `+inf` is written as `null` and read back.
mod extended_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
