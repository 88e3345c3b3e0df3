//! Synthetic ECU telemetry with injectable faults.
//!
//! Six latent processes drive every channel:
//!
//! | latent | meaning            | dynamics                        |
//! |--------|--------------------|---------------------------------|
//! | `d`    | driver demand      | fast AR(1) through a logistic   |
//! | `v`    | vehicle speed      | first-order lag of `d`          |
//! | `t`    | thermal state      | slow AR(1) through a logistic   |
//! | `e`    | electrical load    | AR(1) through a logistic        |
//! | `a`    | ambient conditions | very slow AR(1)                 |
//! | `l`    | exhaust lambda     | fast AR(1) through a logistic   |
//!
//! Each sensor is a fixed formula of the latents (see [`channel_values`]) plus
//! Gaussian noise with standard deviation `noise_scale * (max - min)`,
//! clipped to the sensor's physical range. Two-state channels are thresholds
//! of the latents and carry no noise; each one shifts at least one continuous
//! channel so that it can be recovered from its peers.
//!
//! Faults overwrite readings after the clean frame is generated and are not
//! clipped. Each fault draws from its own random stream, so entries outside
//! fault windows are bit-identical to a fault-free run with the same seed.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::catalog::{Dataset, SensorCatalog, SensorFrame, SensorKind};
use crate::error::{Error, Result};

/// Timestamp of frame 0 (2024-01-01T00:00:00Z).
pub const EPOCH_MS: i64 = 1_704_067_200_000;
pub const FRAME_INTERVAL_MS: i64 = 1_000;
pub const DEFAULT_NOISE_SCALE: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FaultKind {
    StuckAt {
        value: f64,
    },
    Offset {
        delta: f64,
    },
    /// Adds `rate * (frame - start_frame)`.
    Drift {
        rate: f64,
    },
    /// Adds zero-mean Gaussian noise with standard deviation `scale`.
    NoiseBurst {
        scale: f64,
    },
    /// Reads the sensor's physical minimum.
    Dropout,
}

/// A fault on one sensor over the inclusive frame window
/// `start_frame..=end_frame`. Values are in raw physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub sensor_id: usize,
    #[serde(flatten)]
    pub kind: FaultKind,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl FaultSpec {
    pub fn covers(&self, frame: usize) -> bool {
        (self.start_frame..=self.end_frame).contains(&frame)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_frames: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
}

fn default_noise_scale() -> f64 {
    DEFAULT_NOISE_SCALE
}

impl ScenarioConfig {
    pub fn new(n_frames: usize, seed: u64) -> Self {
        Self {
            n_frames,
            seed,
            noise_scale: DEFAULT_NOISE_SCALE,
            faults: Vec::new(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self, catalog: &SensorCatalog) -> Result<()> {
        if self.n_frames == 0 {
            return Err(Error::InvalidConfig("n_frames must be at least 1".into()));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise_scale must be a finite value >= 0, got {}",
                self.noise_scale
            )));
        }
        for f in &self.faults {
            if f.sensor_id >= catalog.len() {
                return Err(Error::UnknownSensor(f.sensor_id));
            }
            if f.start_frame > f.end_frame || f.end_frame >= self.n_frames {
                return Err(Error::InvalidConfig(format!(
                    "fault window {}..={} on sensor {} does not fit {} frames",
                    f.start_frame, f.end_frame, f.sensor_id, self.n_frames
                )));
            }
            let finite = match f.kind {
                FaultKind::StuckAt { value: x }
                | FaultKind::Offset { delta: x }
                | FaultKind::Drift { rate: x }
                | FaultKind::NoiseBurst { scale: x } => x.is_finite(),
                FaultKind::Dropout => true,
            };
            if !finite {
                return Err(Error::InvalidConfig(format!(
                    "fault on sensor {} has a non-finite parameter",
                    f.sensor_id
                )));
            }
        }
        Ok(())
    }
}

/// Pre-fault values and fault flags for every generated frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub timestamps: Vec<i64>,
    pub true_values: Vec<Vec<f64>>,
    pub faulted: Vec<Vec<bool>>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.true_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_values.is_empty()
    }

    /// True when no sensor is faulted in frame `i`.
    pub fn is_clean(&self, i: usize) -> bool {
        !self.faulted[i].iter().any(|&f| f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Latents {
    pub demand: f64,
    pub speed: f64,
    pub thermal: f64,
    pub electrical: f64,
    pub ambient: f64,
    pub lambda: f64,
}

struct LatentWalk {
    zd: f64,
    zt: f64,
    ze: f64,
    za: f64,
    zl: f64,
    v: f64,
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl LatentWalk {
    fn new() -> Self {
        Self {
            zd: 0.0,
            zt: 0.0,
            ze: 0.0,
            za: 0.0,
            zl: 0.0,
            v: 0.5,
        }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) -> Latents {
        let mut n = || rng.sample::<f64, _>(StandardNormal);
        self.zd = 0.97 * self.zd + 0.25 * n();
        self.zt = 0.99 * self.zt + 0.07 * n();
        self.ze = 0.99 * self.ze + 0.1 * n();
        self.za = 0.995 * self.za + 0.045 * n();
        self.zl = 0.8 * self.zl + 0.6 * n();
        let demand = logistic(self.zd);
        self.v += 0.05 * (demand - self.v);
        Latents {
            demand,
            speed: self.v,
            thermal: logistic(0.8 + self.zt),
            electrical: logistic(self.ze),
            ambient: logistic(self.za),
            lambda: logistic(self.zl),
        }
    }
}

/// Noise-free channel values in catalog order for one latent state.
pub fn channel_values(l: &Latents) -> [f64; 20] {
    let d = l.demand;
    let t = l.thermal;
    let moving = if l.speed > 0.35 { 1.0 } else { 0.0 };
    let closed_loop = if t > 0.55 { 1.0 } else { 0.0 };
    let fan = if t > 0.75 { 1.0 } else { 0.0 };
    let strike = if d > 0.85 { 1.0 } else { 0.0 };

    let map = 28.0 + 70.0 * d;
    let rpm = 800.0 + 3500.0 * d + 600.0 * l.speed;
    // lagged saturation of the thermal state
    let water = 20.0 + 80.0 * (1.0 - (-3.0 * t).exp()) / (1.0 - (-3.0f64).exp());
    [
        5.0 + 30.0 * l.ambient + 12.0 * t * (1.0 - l.speed),
        map,
        if moving > 0.0 {
            10.0 + 10.0 * (1.0 - d)
        } else {
            40.0 + 60.0 * (1.0 - t)
        },
        rpm,
        0.5 + 4.0 * d,
        1.5 + 7.5 * d + 0.5 * (1.0 - t) + 0.6 * (1.0 - closed_loop),
        100.0 * d,
        water,
        2.0 + 3.0 * (1.0 - l.electrical) + 0.5 * d,
        12.0 + 2.2 * l.electrical - 1.0 * fan,
        closed_loop,
        0.15 + 0.7 * l.lambda,
        0.4 + 0.25 * l.lambda + 0.1 * t + 0.15 * closed_loop,
        if moving > 0.0 {
            15.0 + 180.0 * (l.speed - 0.35)
        } else {
            0.0
        },
        100.0 * (map - 20.0) / 80.0,
        10.0 + 40.0 * t + 30.0 * l.ambient,
        fan,
        10.0 + 25.0 * rpm / 6000.0 - 10.0 * d - 10.0 * strike,
        moving,
        strike,
    ]
}

/// Generates `config.n_frames` frames and applies the configured faults.
///
/// Channel formulas follow the default catalog's sensor order; the supplied
/// catalog provides physical ranges and sensor kinds.
pub fn generate(
    catalog: Arc<SensorCatalog>,
    config: &ScenarioConfig,
) -> Result<(Dataset, GroundTruth)> {
    config.validate(&catalog)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut walk = LatentWalk::new();

    let mut values: Vec<Vec<f64>> = Vec::with_capacity(config.n_frames);
    for _ in 0..config.n_frames {
        let latents = walk.step(&mut rng);
        let clean = channel_values(&latents);
        let row = catalog
            .sensors()
            .iter()
            .zip(clean)
            .map(|(spec, x)| {
                let x = match spec.kind {
                    SensorKind::DiscreteState => x,
                    SensorKind::Continuous => {
                        let eps: f64 = rng.sample(StandardNormal);
                        x + eps * config.noise_scale * spec.span()
                    }
                };
                x.clamp(spec.physical_min, spec.physical_max)
            })
            .collect();
        values.push(row);
    }

    let truth_values = values.clone();
    let mut faulted = vec![vec![false; catalog.len()]; config.n_frames];
    for (k, fault) in config.faults.iter().enumerate() {
        let mut fault_rng = ChaCha8Rng::seed_from_u64(config.seed);
        fault_rng.set_stream(k as u64 + 1);
        let s = fault.sensor_id;
        let min = catalog.sensors()[s].physical_min;
        for i in fault.start_frame..=fault.end_frame {
            let x = truth_values[i][s];
            values[i][s] = match fault.kind {
                FaultKind::StuckAt { value } => value,
                FaultKind::Offset { delta } => x + delta,
                FaultKind::Drift { rate } => x + rate * (i - fault.start_frame) as f64,
                FaultKind::NoiseBurst { scale } => {
                    x + scale * fault_rng.sample::<f64, _>(StandardNormal)
                }
                FaultKind::Dropout => min,
            };
            faulted[i][s] = true;
        }
    }

    let timestamps: Vec<i64> = (0..config.n_frames as i64)
        .map(|i| EPOCH_MS + i * FRAME_INTERVAL_MS)
        .collect();
    let frames = timestamps
        .iter()
        .zip(values)
        .map(|(&t, v)| SensorFrame::new(t, v))
        .collect();
    let dataset = Dataset::new(catalog, frames)?;
    Ok((
        dataset,
        GroundTruth {
            timestamps,
            true_values: truth_values,
            faulted,
        },
    ))
}

const FAULT_SUFFIX: &str = "__fault";

pub fn truth_header(catalog: &SensorCatalog) -> Vec<String> {
    std::iter::once(crate::telemetry::TIMESTAMP_COLUMN.to_string())
        .chain(
            catalog
                .names()
                .flat_map(|n| [n.to_string(), format!("{n}{FAULT_SUFFIX}")]),
        )
        .collect()
}

/// Writes ground truth as CSV: timestamp, then `<name>` (true value) and
/// `<name>__fault` (0 or 1) for each sensor.
pub fn write_truth<W: Write>(
    writer: W,
    catalog: &SensorCatalog,
    truth: &GroundTruth,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(truth_header(catalog))?;
    for i in 0..truth.len() {
        let mut record = vec![truth.timestamps[i].to_string()];
        for (x, f) in truth.true_values[i].iter().zip(&truth.faulted[i]) {
            record.push(x.to_string());
            record.push(if *f { "1" } else { "0" }.to_string());
        }
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn read_truth<R: Read>(reader: R, catalog: &SensorCatalog) -> Result<GroundTruth> {
    let mut r = csv::Reader::from_reader(reader);
    let expected = truth_header(catalog);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != expected {
        return Err(Error::InvalidDataset(
            "ground-truth header does not match the catalog".into(),
        ));
    }
    let mut truth = GroundTruth {
        timestamps: Vec::new(),
        true_values: Vec::new(),
        faulted: Vec::new(),
    };
    for (row, record) in r.records().enumerate() {
        let record = record?;
        let line = row as u64 + 2;
        let bad = |message: String| Error::Parse { line, message };
        truth.timestamps.push(
            record[0]
                .parse()
                .map_err(|e| bad(format!("timestamp: {e}")))?,
        );
        let mut values = Vec::with_capacity(catalog.len());
        let mut flags = Vec::with_capacity(catalog.len());
        for s in 0..catalog.len() {
            let x = &record[1 + 2 * s];
            values.push(x.parse::<f64>().map_err(|e| bad(format!("{x:?}: {e}")))?);
            flags.push(match &record[2 + 2 * s] {
                "0" => false,
                "1" => true,
                other => return Err(bad(format!("fault flag {other:?} is not 0 or 1"))),
            });
        }
        truth.true_values.push(values);
        truth.faulted.push(flags);
    }
    Ok(truth)
}

pub fn save_truth(path: &Path, catalog: &SensorCatalog, truth: &GroundTruth) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_truth(std::io::BufWriter::new(file), catalog, truth)
}

pub fn load_truth(path: &Path, catalog: &SensorCatalog) -> Result<GroundTruth> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_truth(file, catalog)
}

/// Per-frame detector decisions: whether each sensor was flagged Defective
/// and the substituted value, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Detections {
    pub defective: Vec<Vec<bool>>,
    pub substituted: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorBenchmark {
    pub sensor: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// 1 when the detector never flags the sensor.
    pub precision: f64,
    /// `None` when the sensor is never faulted.
    pub recall: Option<f64>,
    /// Mean frames from the start of a fault window to its first detection,
    /// over windows that were detected at all.
    pub mean_latency: Option<f64>,
    /// Mean `|substituted - true|` over faulted frames with a substitution.
    pub substitution_mae: Option<f64>,
}

/// Scores Defective flags against fault flags, sensor by sensor.
pub fn benchmark_report(
    detections: &Detections,
    truth: &GroundTruth,
) -> Result<Vec<SensorBenchmark>> {
    let n = truth.len();
    if detections.defective.len() != n || detections.substituted.len() != n {
        return Err(Error::LengthMismatch {
            left: detections.defective.len(),
            right: n,
        });
    }
    let width = truth.faulted.first().map_or(0, Vec::len);
    for i in 0..n {
        if detections.defective[i].len() != width || detections.substituted[i].len() != width {
            return Err(Error::LengthMismatch {
                left: detections.defective[i].len(),
                right: width,
            });
        }
    }

    Ok((0..width)
        .map(|s| {
            let (mut tp, mut fp, mut fne) = (0, 0, 0);
            let (mut sub_err, mut sub_n) = (0.0, 0usize);
            let mut latencies = Vec::new();
            let mut window_start: Option<usize> = None;
            let mut window_detected = false;
            for i in 0..n {
                let fault = truth.faulted[i][s];
                let flag = detections.defective[i][s];
                match (fault, flag) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fne += 1,
                    (false, false) => {}
                }
                if fault {
                    let start = *window_start.get_or_insert(i);
                    if flag && !window_detected {
                        latencies.push((i - start) as f64);
                        window_detected = true;
                    }
                    if let Some(x) = detections.substituted[i][s] {
                        sub_err += (x - truth.true_values[i][s]).abs();
                        sub_n += 1;
                    }
                } else {
                    window_start = None;
                    window_detected = false;
                }
            }
            let mean = |sum: f64, count: usize| (count > 0).then(|| sum / count as f64);
            SensorBenchmark {
                sensor: s,
                true_positives: tp,
                false_positives: fp,
                false_negatives: fne,
                precision: if tp + fp == 0 {
                    1.0
                } else {
                    tp as f64 / (tp + fp) as f64
                },
                recall: (tp + fne > 0).then(|| tp as f64 / (tp + fne) as f64),
                mean_latency: mean(latencies.iter().sum(), latencies.len()),
                substitution_mae: mean(sub_err, sub_n),
            }
        })
        .collect())
}
