//! End-to-end fitting: cleanse, split, normalize, train the autoencoder,
//! calibrate residuals on validation data and fit the forest bank.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact::{ModelArtifact, RowCounts, TrainingMetadata};
use crate::autoencoder::{self, TrainConfig};
use crate::calibration::{self, ResidualProfile};
use crate::catalog::Dataset;
use crate::error::{Error, Result, StageContext};
use crate::forest::{self, ForestBank, ForestConfig};
use crate::preprocess::{self, NormalizationParams};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub split_seed: u64,
    pub autoencoder: TrainConfig,
    pub forest: ForestConfig,
}

impl PipelineConfig {
    /// Defaults with every seed set to `seed`.
    pub fn seeded(seed: u64) -> Self {
        let mut c = Self::default();
        c.set_seed(seed);
        c
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.split_seed = seed;
        self.autoencoder.seed = seed;
        self.forest.seed = seed;
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

/// One row of the post-training summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSummary {
    pub sensor: usize,
    pub name: String,
    /// Reconstruction R² on the test split; `None` for a constant sensor.
    pub autoencoder_r2: Option<f64>,
    pub mu: f64,
    pub sigma: f64,
    pub k: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedPipeline {
    pub artifact: ModelArtifact,
    pub summary: Vec<SensorSummary>,
    /// Normalized splits, kept for evaluation by the caller.
    pub splits: crate::catalog::SplitDataset,
    pub trace: autoencoder::TrainTrace,
}

/// Runs every fitting stage on raw telemetry. Errors carry the stage name.
pub fn train_pipeline(raw: &Dataset, config: &PipelineConfig) -> Result<TrainedPipeline> {
    config.autoencoder.validate().stage("configuration")?;
    config.forest.validate().stage("configuration")?;
    let catalog = raw.catalog_arc().clone();

    let (clean, cleansing) = preprocess::cleanse(raw);
    let split = preprocess::split(&clean, config.split_seed).stage("split")?;
    let normalizer = NormalizationParams::fit(&split.train).stage("normalize")?;
    let norm = crate::catalog::SplitDataset {
        train: normalizer.normalize_dataset(&split.train),
        validation: normalizer.normalize_dataset(&split.validation),
        test: normalizer.normalize_dataset(&split.test),
    };

    let init = autoencoder::AutoencoderModel::with_widths(
        catalog.len(),
        autoencoder::BOTTLENECK,
        config.autoencoder.seed,
    );
    let (ae, trace) = autoencoder::train(&init, &norm.train, &norm.validation, &config.autoencoder)
        .stage("autoencoder")?;

    let residuals = calibration::residuals(&ae, &norm.validation).stage("calibration")?;
    let profile = ResidualProfile::fit(&residuals).stage("calibration")?;

    let ks = ForestBank::peer_counts(&catalog);
    let forests = ForestBank::fit(&norm.train, &ks, &config.forest).stage("forest")?;

    let r2 = ae.reconstruction_r2(&norm.test).stage("summary")?;
    let summary = catalog
        .sensors()
        .iter()
        .map(|spec| SensorSummary {
            sensor: spec.id,
            name: spec.name.clone(),
            autoencoder_r2: r2[spec.id].as_ref().ok().copied(),
            mu: profile.sensors[spec.id].mu,
            sigma: profile.sensors[spec.id].sigma,
            k: ks[spec.id],
        })
        .collect();

    let metadata = TrainingMetadata {
        config: config.clone(),
        rows: RowCounts {
            input: cleansing.rows_in,
            cleansed: cleansing.rows_out,
            train: norm.train.len(),
            validation: norm.validation.len(),
            test: norm.test.len(),
        },
        epochs_run: trace.epochs.len(),
        best_epoch: trace.best_epoch,
        best_validation_loss: trace.epochs[trace.best_epoch].validation_loss,
    };
    let artifact = ModelArtifact::new(
        (*catalog).clone(),
        normalizer,
        ae,
        profile,
        forests,
        metadata,
    );
    Ok(TrainedPipeline {
        artifact,
        summary,
        splits: norm,
        trace,
    })
}

/// Autoencoder and forest quality of a fitted model on normalized data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub sensor: usize,
    pub name: String,
    pub autoencoder_r2: Option<f64>,
    pub forest_mae: f64,
    pub forest_r2: Option<f64>,
    pub k: usize,
}

pub fn evaluate(artifact: &ModelArtifact, normalized: &Dataset) -> Result<Vec<EvaluationRow>> {
    let ae_r2 = artifact.autoencoder.reconstruction_r2(normalized)?;
    let scores = forest::evaluate_bank(&artifact.forests, normalized)?;
    Ok(scores
        .into_iter()
        .map(|s| EvaluationRow {
            sensor: s.sensor,
            name: artifact.catalog.sensors()[s.sensor].name.clone(),
            autoencoder_r2: ae_r2[s.sensor].as_ref().ok().copied(),
            forest_mae: s.mae,
            forest_r2: s.r2,
            k: s.k,
        })
        .collect())
}
