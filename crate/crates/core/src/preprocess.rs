//! Train/validation/test splitting, cleansing and min-max normalization.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Dataset, SensorFrame, SplitDataset};
use crate::error::{Error, Result};

/// Fraction of all frames held out for evaluation.
pub const TEST_FRACTION: f64 = 0.33;
/// Fraction of the remaining (training) frames held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.25;
pub const MIN_SPLIT_FRAMES: usize = 10;

/// Part sizes `(train, validation, test)` for `n` frames.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let test = ((n as f64 * TEST_FRACTION).round() as usize).clamp(1, n.saturating_sub(2));
    let rest = n - test;
    let validation = ((rest as f64 * VALIDATION_FRACTION).round() as usize).clamp(1, rest - 1);
    (rest - validation, validation, test)
}

/// Seeded uniform random partition. Each part keeps the input's frame order.
pub fn split(dataset: &Dataset, seed: u64) -> Result<SplitDataset> {
    let n = dataset.len();
    if n < MIN_SPLIT_FRAMES {
        return Err(Error::TooFewFrames {
            found: n,
            required: MIN_SPLIT_FRAMES,
        });
    }
    let (_, n_val, n_test) = split_sizes(n);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let take = |idx: &mut [usize]| {
        idx.sort_unstable();
        let frames = idx.iter().map(|&i| dataset.frames()[i].clone()).collect();
        Dataset::from_parts(dataset.catalog_arc().clone(), frames)
    };
    let (test_idx, rest) = order.split_at_mut(n_test);
    let (val_idx, train_idx) = rest.split_at_mut(n_val);
    Ok(SplitDataset {
        test: take(test_idx),
        validation: take(val_idx),
        train: take(train_idx),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleansingReport {
    pub rows_in: usize,
    pub rows_dropped_nonfinite: usize,
    pub rows_dropped_out_of_range: usize,
    pub rows_out: usize,
}

/// Drops frames with non-finite or out-of-range values. A frame with both
/// problems counts as non-finite. Surviving frames are untouched.
pub fn cleanse(dataset: &Dataset) -> (Dataset, CleansingReport) {
    let catalog = dataset.catalog();
    let mut nonfinite = 0;
    let mut out_of_range = 0;
    let kept: Vec<SensorFrame> = dataset
        .frames()
        .iter()
        .filter(|f| {
            if f.values.iter().any(|v| !v.is_finite()) {
                nonfinite += 1;
                false
            } else if catalog
                .sensors()
                .iter()
                .zip(&f.values)
                .any(|(s, &v)| !s.in_range(v))
            {
                out_of_range += 1;
                false
            } else {
                true
            }
        })
        .cloned()
        .collect();
    let report = CleansingReport {
        rows_in: dataset.len(),
        rows_dropped_nonfinite: nonfinite,
        rows_dropped_out_of_range: out_of_range,
        rows_out: kept.len(),
    };
    (
        Dataset::from_parts(dataset.catalog_arc().clone(), kept),
        report,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorRange {
    pub min: f64,
    pub max: f64,
}

impl SensorRange {
    fn is_constant(&self) -> bool {
        self.max == self.min
    }
}

/// Per-sensor min/max fitted on training frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub ranges: Vec<SensorRange>,
}

impl NormalizationParams {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut ranges = vec![
            SensorRange {
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
            };
            train.catalog().len()
        ];
        for frame in train.frames() {
            for (r, &v) in ranges.iter_mut().zip(&frame.values) {
                r.min = r.min.min(v);
                r.max = r.max.max(v);
            }
        }
        if ranges
            .iter()
            .any(|r| !(r.min.is_finite() && r.max.is_finite()))
        {
            return Err(Error::InvalidDataset(
                "training data has a sensor with no finite values".into(),
            ));
        }
        Ok(Self { ranges })
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// `(x - min) / (max - min)`, or 0 for a constant sensor. Not clipped.
    pub fn normalize_value(&self, sensor: usize, x: f64) -> f64 {
        let r = self.ranges[sensor];
        if r.is_constant() {
            0.0
        } else {
            (x - r.min) / (r.max - r.min)
        }
    }

    /// Inverse of [`normalize_value`](Self::normalize_value); constant sensors map to `min`.
    pub fn denormalize_value(&self, sensor: usize, v: f64) -> f64 {
        let r = self.ranges[sensor];
        if r.is_constant() {
            r.min
        } else {
            r.min + v * (r.max - r.min)
        }
    }

    /// Converts a normalized-space distance into raw units.
    pub fn denormalize_scale(&self, sensor: usize, d: f64) -> f64 {
        let r = self.ranges[sensor];
        d * (r.max - r.min)
    }

    pub fn normalize(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .enumerate()
            .map(|(i, &x)| self.normalize_value(i, x))
            .collect()
    }

    pub fn denormalize(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| self.denormalize_value(i, v))
            .collect()
    }

    pub fn normalize_frame(&self, frame: &SensorFrame) -> SensorFrame {
        SensorFrame::new(frame.timestamp_ms, self.normalize(&frame.values))
    }

    pub fn normalize_dataset(&self, dataset: &Dataset) -> Dataset {
        let frames = dataset
            .frames()
            .iter()
            .map(|f| self.normalize_frame(f))
            .collect();
        Dataset::from_parts(dataset.catalog_arc().clone(), frames)
    }
}
