//! Model artifact: one versioned JSON document bundling the catalog, the
//! normalizer, the autoencoder, the residual profile and the forest bank.
//!
//! The artifact records the SHA-256 fingerprint of its catalog. Loading checks
//! the format version, that the fingerprint matches the embedded catalog and,
//! when a catalog is supplied, that it matches that catalog as well.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autoencoder::AutoencoderModel;
use crate::calibration::ResidualProfile;
use crate::catalog::SensorCatalog;
use crate::error::{Error, Result};
use crate::forest::ForestBank;
use crate::monitor::MonitorPipeline;
use crate::preprocess::NormalizationParams;
use crate::training::PipelineConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowCounts {
    pub input: usize,
    pub cleansed: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub config: PipelineConfig,
    pub rows: RowCounts,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub catalog_fingerprint: String,
    pub catalog: SensorCatalog,
    pub normalizer: NormalizationParams,
    pub autoencoder: AutoencoderModel,
    pub profile: ResidualProfile,
    pub forests: ForestBank,
    pub metadata: TrainingMetadata,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

impl ModelArtifact {
    pub fn new(
        catalog: SensorCatalog,
        normalizer: NormalizationParams,
        autoencoder: AutoencoderModel,
        profile: ResidualProfile,
        forests: ForestBank,
        metadata: TrainingMetadata,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            catalog_fingerprint: catalog.fingerprint(),
            catalog,
            normalizer,
            autoencoder,
            profile,
            forests,
            metadata,
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("artifact serializes to json");
        text.push('\n');
        text
    }

    /// Parses and verifies an artifact. With `expected` set, its fingerprint
    /// must equal the artifact's.
    pub fn from_json(text: &str, expected: Option<&SensorCatalog>) -> Result<Self> {
        let probe: VersionProbe = serde_json::from_str(text)?;
        if probe.format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: probe.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let artifact: Self = serde_json::from_str(text)?;
        artifact.verify(expected)?;
        Ok(artifact)
    }

    pub fn verify(&self, expected: Option<&SensorCatalog>) -> Result<()> {
        let embedded = self.catalog.fingerprint();
        if embedded != self.catalog_fingerprint {
            return Err(Error::FingerprintMismatch {
                artifact: self.catalog_fingerprint.clone(),
                catalog: embedded,
            });
        }
        if let Some(catalog) = expected {
            let supplied = catalog.fingerprint();
            if supplied != self.catalog_fingerprint {
                return Err(Error::FingerprintMismatch {
                    artifact: self.catalog_fingerprint.clone(),
                    catalog: supplied,
                });
            }
        }
        self.pipeline().map(|_| ())
    }

    /// Writes the artifact through a temporary file so a failed write never
    /// leaves a partial artifact at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".partial");
        let tmp = std::path::PathBuf::from(tmp);
        std::fs::write(&tmp, self.to_json()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, expected: Option<&SensorCatalog>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, expected)
    }

    pub fn pipeline(&self) -> Result<MonitorPipeline> {
        MonitorPipeline::new(
            Arc::new(self.catalog.clone()),
            self.normalizer.clone(),
            self.autoencoder.clone(),
            self.profile.clone(),
            self.forests.clone(),
        )
    }
}
