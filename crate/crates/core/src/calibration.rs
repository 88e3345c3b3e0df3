//! Residual statistics and the five-band health classification.
//!
//! A residual is the absolute difference between a normalized reading and its
//! reconstruction. Each sensor's validation residuals give a mean `mu` and a
//! sample standard deviation `sigma`; a new residual `e` is scored by
//! `z = |e - mu| / sigma` and banded at 1, 2, 3 and 4 standard deviations,
//! lower bound inclusive.

use serde::{Deserialize, Serialize};

use crate::autoencoder::AutoencoderModel;
use crate::catalog::{Dataset, HealthIndex};
use crate::error::{Error, Result};

/// `|x[i][s] - reconstruction(x[i])[s]|` for every frame and sensor.
pub fn residuals(model: &AutoencoderModel, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
    dataset
        .frames()
        .iter()
        .map(|f| frame_residuals(&f.values, &model.forward(&f.values)?))
        .collect()
}

pub fn frame_residuals(actual: &[f64], reconstructed: &[f64]) -> Result<Vec<f64>> {
    if actual.len() != reconstructed.len() {
        return Err(Error::LengthMismatch {
            left: actual.len(),
            right: reconstructed.len(),
        });
    }
    Ok(actual
        .iter()
        .zip(reconstructed)
        .map(|(a, r)| (a - r).abs())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorStats {
    pub mu: f64,
    pub sigma: f64,
    pub n: usize,
}

impl SensorStats {
    pub fn z_score(&self, residual: f64) -> f64 {
        if self.sigma == 0.0 {
            if residual == self.mu {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (residual - self.mu).abs() / self.sigma
        }
    }

    pub fn classify(&self, residual: f64) -> Result<HealthIndex> {
        classify(residual, self.mu, self.sigma)
    }
}

/// Per-sensor residual statistics fitted on validation data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualProfile {
    pub sensors: Vec<SensorStats>,
}

impl ResidualProfile {
    /// Sample mean and `n - 1` standard deviation of each residual column.
    pub fn fit(residuals: &[Vec<f64>]) -> Result<Self> {
        if residuals.len() < 2 {
            return Err(Error::TooFewSamples {
                found: residuals.len(),
            });
        }
        let width = residuals[0].len();
        if let Some(bad) = residuals.iter().find(|r| r.len() != width) {
            return Err(Error::LengthMismatch {
                left: width,
                right: bad.len(),
            });
        }
        let n = residuals.len();
        let sensors = (0..width)
            .map(|s| {
                let mu = residuals.iter().map(|r| r[s]).sum::<f64>() / n as f64;
                let ss: f64 = residuals.iter().map(|r| (r[s] - mu).powi(2)).sum();
                SensorStats {
                    mu,
                    sigma: (ss / (n - 1) as f64).sqrt(),
                    n,
                }
            })
            .collect();
        Ok(Self { sensors })
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }
}

/// Bands `z = |residual - mu| / sigma` into the five health classes. With a
/// zero `sigma`, only `residual == mu` is healthy and anything else is defective.
pub fn classify(residual: f64, mu: f64, sigma: f64) -> Result<HealthIndex> {
    if residual < 0.0 {
        return Err(Error::NegativeResidual(residual));
    }
    if sigma == 0.0 {
        return Ok(if residual == mu {
            HealthIndex::Healthy
        } else {
            HealthIndex::Defective
        });
    }
    Ok(band((residual - mu).abs() / sigma))
}

/// Health class for a distance `z` (in standard deviations) from the mean.
pub fn band(z: f64) -> HealthIndex {
    if z < 1.0 {
        HealthIndex::Healthy
    } else if z < 2.0 {
        HealthIndex::AlmostHealthy
    } else if z < 3.0 {
        HealthIndex::Normal
    } else if z < 4.0 {
        HealthIndex::AlmostDefective
    } else {
        HealthIndex::Defective
    }
}
