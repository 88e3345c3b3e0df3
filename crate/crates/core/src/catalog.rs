//! Sensor catalog, telemetry containers and the health vocabulary.
//!
//! The default catalog lists the twenty ECU channels the monitor watches, in
//! the fixed order used by every model, CSV file and report.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Number of monitored channels.
pub const SENSOR_COUNT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensorKind {
    Continuous,
    /// Two-state channel carried as a real in {0, 1}.
    DiscreteState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub id: usize,
    pub name: String,
    pub unit: String,
    #[serde(rename = "min")]
    pub physical_min: f64,
    #[serde(rename = "max")]
    pub physical_max: f64,
    pub kind: SensorKind,
    /// Number of correlated peers the sensor's forest estimator uses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer_features: Option<usize>,
}

impl SensorSpec {
    pub fn in_range(&self, value: f64) -> bool {
        value >= self.physical_min && value <= self.physical_max
    }

    pub fn span(&self) -> f64 {
        self.physical_max - self.physical_min
    }
}

/// Ordered, validated list of sensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CatalogFile")]
pub struct SensorCatalog {
    #[serde(rename = "sensor")]
    sensors: Vec<SensorSpec>,
}

#[derive(Deserialize)]
struct CatalogFile {
    sensor: Vec<SensorSpec>,
}

impl TryFrom<CatalogFile> for SensorCatalog {
    type Error = Error;

    fn try_from(file: CatalogFile) -> Result<Self> {
        Self::new(file.sensor)
    }
}

// (name, unit, min, max, kind, peer features)
const DEFAULT_SENSORS: [(&str, &str, f64, f64, SensorKind, usize); SENSOR_COUNT] = {
    use SensorKind::{Continuous as C, DiscreteState as D};
    [
        ("manifold_air_temperature", "degC", -40.0, 150.0, C, 19),
        ("manifold_pressure", "kPa", 10.0, 110.0, C, 6),
        ("stepper_rotation_rate", "steps", 0.0, 255.0, C, 3),
        ("engine_speed", "rpm", 0.0, 8000.0, C, 5),
        ("throttle_position_voltage", "V", 0.0, 5.0, C, 4),
        ("fuel_injection_time", "ms", 0.0, 25.0, C, 7),
        ("throttle_position", "%", 0.0, 100.0, C, 5),
        ("engine_water_temperature", "degC", -40.0, 130.0, C, 18),
        ("coil_charging_time", "ms", 0.0, 10.0, C, 2),
        ("battery_voltage", "V", 6.0, 16.0, C, 6),
        ("vehicle_condition", "state", 0.0, 1.0, D, 17),
        ("upstream_oxygen_voltage", "V", 0.0, 1.0, C, 17),
        ("downstream_oxygen_voltage", "V", 0.0, 1.0, C, 17),
        ("speed", "km/h", 0.0, 220.0, C, 15),
        ("engine_load", "%", 0.0, 100.0, C, 9),
        ("canister_purge", "%", 0.0, 100.0, C, 2),
        ("fan_status", "state", 0.0, 1.0, D, 5),
        ("advance_angle", "deg", -20.0, 60.0, C, 3),
        ("move", "state", 0.0, 1.0, D, 1),
        ("strike", "state", 0.0, 1.0, D, 19),
    ]
};

/// The twenty-channel catalog with default ranges and peer-feature counts.
pub fn default_catalog() -> SensorCatalog {
    let sensors = DEFAULT_SENSORS
        .iter()
        .enumerate()
        .map(|(id, &(name, unit, min, max, kind, k))| SensorSpec {
            id,
            name: name.to_string(),
            unit: unit.to_string(),
            physical_min: min,
            physical_max: max,
            kind,
            peer_features: Some(k),
        })
        .collect();
    SensorCatalog::new(sensors).expect("default catalog is valid")
}

impl SensorCatalog {
    pub fn new(sensors: Vec<SensorSpec>) -> Result<Self> {
        if sensors.len() != SENSOR_COUNT {
            return Err(Error::InvalidCatalog(format!(
                "expected {SENSOR_COUNT} sensors, found {}",
                sensors.len()
            )));
        }
        for (i, s) in sensors.iter().enumerate() {
            if s.id != i {
                return Err(Error::InvalidCatalog(format!(
                    "sensor at position {i} has id {}",
                    s.id
                )));
            }
            if !(s.physical_min.is_finite() && s.physical_max.is_finite()) {
                return Err(Error::InvalidCatalog(format!(
                    "sensor {i} has a non-finite range"
                )));
            }
            if s.physical_min > s.physical_max
                || (s.kind == SensorKind::Continuous && s.physical_min == s.physical_max)
            {
                return Err(Error::InvalidCatalog(format!(
                    "sensor {i} ({}) has min {} >= max {}",
                    s.name, s.physical_min, s.physical_max
                )));
            }
            if sensors[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::InvalidCatalog(format!("duplicate name {}", s.name)));
            }
            if let Some(k) = s.peer_features {
                if k == 0 || k >= SENSOR_COUNT {
                    return Err(Error::InvalidK {
                        k,
                        max: SENSOR_COUNT - 1,
                    });
                }
            }
        }
        Ok(Self { sensors })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("catalog serializes to toml")
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn sensors(&self) -> &[SensorSpec] {
        &self.sensors
    }

    pub fn sensor(&self, id: usize) -> Option<&SensorSpec> {
        self.sensors.get(id)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sensors.iter().map(|s| s.name.as_str())
    }

    /// Peer-feature count for the sensor's forest; all other sensors when unset.
    pub fn peer_features(&self, id: usize) -> usize {
        self.sensors[id].peer_features.unwrap_or(self.len() - 1)
    }

    /// SHA-256 over the canonical JSON encoding of the catalog, hex encoded.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("catalog serializes to json");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// One timestamped reading of every sensor, in catalog order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub timestamp_ms: i64,
    pub values: Vec<f64>,
}

impl SensorFrame {
    pub fn new(timestamp_ms: i64, values: Vec<f64>) -> Self {
        Self {
            timestamp_ms,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    LengthMismatch {
        expected: usize,
        found: usize,
    },
    NonFinite {
        sensor: usize,
    },
    OutOfRange {
        sensor: usize,
        value: f64,
        min: f64,
        max: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LengthMismatch { expected, found } => {
                write!(f, "expected {expected} values, found {found}")
            }
            Violation::NonFinite { sensor } => write!(f, "sensor {sensor}: non-finite value"),
            Violation::OutOfRange {
                sensor,
                value,
                min,
                max,
            } => {
                write!(f, "sensor {sensor}: {value} outside [{min}, {max}]")
            }
        }
    }
}

/// Length and finiteness checks only; physical range is not consulted.
pub fn structural_violations(frame: &SensorFrame, catalog: &SensorCatalog) -> Vec<Violation> {
    let mut out = Vec::new();
    if frame.values.len() != catalog.len() {
        out.push(Violation::LengthMismatch {
            expected: catalog.len(),
            found: frame.values.len(),
        });
    }
    out.extend(
        frame
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_finite())
            .map(|(sensor, _)| Violation::NonFinite { sensor }),
    );
    out
}

/// Every invariant violation of `frame`, ordered by kind then sensor id.
pub fn validate_frame(frame: &SensorFrame, catalog: &SensorCatalog) -> Result<(), Vec<Violation>> {
    let mut out = structural_violations(frame, catalog);
    for (spec, &value) in catalog.sensors().iter().zip(&frame.values) {
        if value.is_finite() && !spec.in_range(value) {
            out.push(Violation::OutOfRange {
                sensor: spec.id,
                value,
                min: spec.physical_min,
                max: spec.physical_max,
            });
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Frames sharing one catalog, in non-decreasing timestamp order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    catalog: Arc<SensorCatalog>,
    frames: Vec<SensorFrame>,
}

impl Dataset {
    pub fn new(catalog: Arc<SensorCatalog>, frames: Vec<SensorFrame>) -> Result<Self> {
        for (i, f) in frames.iter().enumerate() {
            if f.values.len() != catalog.len() {
                return Err(Error::InvalidDataset(format!(
                    "frame {i} has {} values, catalog has {}",
                    f.values.len(),
                    catalog.len()
                )));
            }
        }
        if let Some(i) = frames
            .windows(2)
            .position(|w| w[1].timestamp_ms < w[0].timestamp_ms)
        {
            return Err(Error::InvalidDataset(format!(
                "timestamp decreases at frame {}",
                i + 1
            )));
        }
        Ok(Self { catalog, frames })
    }

    /// Builds a dataset whose invariants hold by construction of the caller.
    pub(crate) fn from_parts(catalog: Arc<SensorCatalog>, frames: Vec<SensorFrame>) -> Self {
        debug_assert!(frames.iter().all(|f| f.values.len() == catalog.len()));
        Self { catalog, frames }
    }

    pub fn catalog(&self) -> &SensorCatalog {
        &self.catalog
    }

    pub fn catalog_arc(&self) -> &Arc<SensorCatalog> {
        &self.catalog
    }

    pub fn frames(&self) -> &[SensorFrame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<SensorFrame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Row views of the frame values.
    pub fn rows(&self) -> Vec<&[f64]> {
        self.frames.iter().map(|f| f.values.as_slice()).collect()
    }

    /// One sensor's values across all frames.
    pub fn column(&self, sensor: usize) -> Vec<f64> {
        self.frames.iter().map(|f| f.values[sensor]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Five-class sensor health, ordered from best to worst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HealthIndex {
    Healthy,
    AlmostHealthy,
    Normal,
    AlmostDefective,
    Defective,
}

impl HealthIndex {
    pub const ALL: [HealthIndex; 5] = [
        HealthIndex::Healthy,
        HealthIndex::AlmostHealthy,
        HealthIndex::Normal,
        HealthIndex::AlmostDefective,
        HealthIndex::Defective,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HealthIndex::Healthy => "healthy",
            HealthIndex::AlmostHealthy => "almost-healthy",
            HealthIndex::Normal => "normal",
            HealthIndex::AlmostDefective => "almost-defective",
            HealthIndex::Defective => "defective",
        }
    }
}

impl fmt::Display for HealthIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HealthIndex {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        HealthIndex::ALL
            .into_iter()
            .find(|h| h.as_str() == s)
            .ok_or_else(|| format!("unknown health class `{s}`"))
    }
}
