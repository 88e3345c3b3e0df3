//! Whole-pipeline properties on small synthetic runs.

use std::sync::{Arc, OnceLock};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sensor_health::autoencoder::{self, AutoencoderModel, TrainConfig};
use sensor_health::catalog::{default_catalog, HealthIndex, SensorFrame};
use sensor_health::forest::{fit_forest_rows, ForestConfig};
use sensor_health::monitor::{MonitorReport, StreamRecord};
use sensor_health::synthetic::{generate, FaultKind, FaultSpec, ScenarioConfig};
use sensor_health::training::{train_pipeline, PipelineConfig, TrainedPipeline};
use sensor_health::{Dataset, ModelArtifact};

fn small_config(seed: u64) -> PipelineConfig {
    let mut c = PipelineConfig::seeded(seed);
    c.autoencoder.epochs = 60;
    c.forest.n_trees = 10;
    c
}

fn trained() -> &'static TrainedPipeline {
    static T: OnceLock<TrainedPipeline> = OnceLock::new();
    T.get_or_init(|| {
        let (raw, _) =
            generate(Arc::new(default_catalog()), &ScenarioConfig::new(1500, 31)).unwrap();
        train_pipeline(&raw, &small_config(5)).unwrap()
    })
}

/// A stream with a few faults so that every health class shows up.
fn faulty_stream() -> Dataset {
    let mut cfg = ScenarioConfig::new(300, 32);
    cfg.faults = vec![
        FaultSpec {
            sensor_id: 3,
            kind: FaultKind::StuckAt { value: 7000.0 },
            start_frame: 20,
            end_frame: 60,
        },
        FaultSpec {
            sensor_id: 9,
            kind: FaultKind::Drift { rate: 0.02 },
            start_frame: 100,
            end_frame: 250,
        },
    ];
    generate(Arc::new(default_catalog()), &cfg).unwrap().0
}

fn report_bits(r: &MonitorReport) -> Vec<u64> {
    let mut out = vec![r.timestamp_ms as u64];
    for s in &r.sensors {
        out.extend([
            s.raw_value.to_bits(),
            s.reconstructed_value.to_bits(),
            s.residual.to_bits(),
            s.z_band.to_bits(),
            s.health as u64,
            s.substituted_value.map_or(u64::MAX, f64::to_bits),
        ]);
    }
    out
}

#[test]
fn single_repeated_frame_is_memorized() {
    let catalog = Arc::new(default_catalog());
    let (raw, _) = generate(catalog.clone(), &ScenarioConfig::new(1, 8)).unwrap();
    let values: Vec<f64> = raw.frames()[0]
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let s = &catalog.sensors()[i];
            (v - s.physical_min) / s.span()
        })
        .collect();
    let frames: Vec<SensorFrame> = (0..32)
        .map(|t| SensorFrame::new(t, values.clone()))
        .collect();
    let ds = Dataset::new(catalog, frames).unwrap();
    let config = TrainConfig {
        epochs: 5000,
        early_stop_patience: 5000,
        seed: 3,
        ..TrainConfig::default()
    };
    let init = AutoencoderModel::with_widths(20, autoencoder::BOTTLENECK, 3);
    let (model, trace) = autoencoder::train(&init, &ds, &ds, &config).unwrap();
    let rows = ds.rows();
    let loss = model.loss(&rows).unwrap();
    assert!(
        loss < 1e-6,
        "loss {loss} after {} epochs",
        trace.epochs.len()
    );
}

#[test]
fn autoencoder_training_is_seed_pure() {
    let t = trained();
    let config = TrainConfig {
        epochs: 5,
        seed: 9,
        ..TrainConfig::default()
    };
    let init = AutoencoderModel::with_widths(20, autoencoder::BOTTLENECK, 9);
    assert_eq!(
        init,
        AutoencoderModel::with_widths(20, autoencoder::BOTTLENECK, 9)
    );
    let run = |c: &TrainConfig| {
        autoencoder::train(&init, &t.splits.train, &t.splits.validation, c).unwrap()
    };
    let (a, ta) = run(&config);
    let (b, tb) = run(&config);
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    let (c, _) = run(&TrainConfig { seed: 10, ..config });
    assert_ne!(a, c);
}

#[test]
fn more_trees_reduce_prediction_variance() {
    let t = trained();
    let rows = t.splits.train.rows();
    let probe: Vec<&[f64]> = t.splits.test.rows().into_iter().take(50).collect();
    let target = 5;
    let variance = |n_trees: usize| -> f64 {
        let preds: Vec<Vec<f64>> = (0..20)
            .map(|seed| {
                let config = ForestConfig {
                    n_trees,
                    seed,
                    ..ForestConfig::default()
                };
                let forest = fit_forest_rows(&rows, target, 7, &config).unwrap();
                probe.iter().map(|p| forest.predict(p)).collect()
            })
            .collect();
        (0..probe.len())
            .map(|j| {
                let col: Vec<f64> = preds.iter().map(|p| p[j]).collect();
                let mean = col.iter().sum::<f64>() / col.len() as f64;
                col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (col.len() - 1) as f64
            })
            .sum::<f64>()
            / probe.len() as f64
    };
    let (one, many) = (variance(1), variance(100));
    assert!(many < one, "variance with 100 trees {many} vs 1 tree {one}");
}

#[test]
fn artifact_round_trip_is_bit_identical() {
    let t = trained();
    let text = t.artifact.to_json();
    let back = ModelArtifact::from_json(&text, Some(&default_catalog())).unwrap();
    assert_eq!(back, t.artifact);
    assert_eq!(back.to_json(), text);

    let before = t.artifact.pipeline().unwrap();
    let after = back.pipeline().unwrap();
    let stream = faulty_stream();
    for frame in stream.frames().iter().take(100) {
        let a = before.process_frame(frame).unwrap();
        let b = after.process_frame(frame).unwrap();
        assert_eq!(report_bits(&a), report_bits(&b));
    }
}

#[test]
fn artifact_file_round_trip_and_rejections() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    t.artifact.save(&path).unwrap();
    assert_eq!(ModelArtifact::load(&path, None).unwrap(), t.artifact);

    let mut other = default_catalog().to_toml_string();
    other = other.replacen("kPa", "hPa", 1);
    let other = sensor_health::SensorCatalog::from_toml_str(&other).unwrap();
    let err = ModelArtifact::load(&path, Some(&other)).unwrap_err();
    assert!(
        matches!(err, sensor_health::Error::FingerprintMismatch { .. }),
        "{err}"
    );

    let bumped = t
        .artifact
        .to_json()
        .replacen("\"format_version\": 1", "\"format_version\": 2", 1);
    let err = ModelArtifact::from_json(&bumped, None).unwrap_err();
    assert!(
        matches!(
            err,
            sensor_health::Error::UnsupportedVersion { found: 2, .. }
        ),
        "{err}"
    );
}

#[test]
fn reports_do_not_depend_on_stream_order() {
    let pipeline = trained().artifact.pipeline().unwrap();
    let stream = faulty_stream();
    let frames = stream.frames().to_vec();
    let in_order: Vec<Vec<u64>> = frames
        .iter()
        .map(|f| report_bits(&pipeline.process_frame(f).unwrap()))
        .collect();

    let mut order: Vec<usize> = (0..frames.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
    let shuffled = order.iter().map(|&i| Ok(frames[i].clone()));
    for (record, &i) in pipeline.process_stream(shuffled).zip(&order) {
        let StreamRecord::Report(report) = record else {
            panic!("unexpected error record");
        };
        assert_eq!(report_bits(&report), in_order[i]);
    }
}

#[test]
fn report_invariants_hold_on_a_faulty_stream() {
    let t = trained();
    let pipeline = t.artifact.pipeline().unwrap();
    let normalizer = &t.artifact.normalizer;
    let stream = faulty_stream();
    let mut seen = [false; 5];
    for frame in stream.frames() {
        let report = pipeline.process_frame(frame).unwrap();
        let norm = normalizer.normalize(&frame.values);
        let recon = t.artifact.autoencoder.forward(&norm).unwrap();
        for s in &report.sensors {
            let i = s.sensor_id;
            seen[s.health as usize] = true;
            assert_eq!(s.raw_value.to_bits(), frame.values[i].to_bits());
            assert!(s.residual >= 0.0);
            assert_eq!(s.residual, (norm[i] - recon[i]).abs());
            assert_eq!(
                s.substituted_value.is_some(),
                s.health == HealthIndex::Defective
            );
            assert_eq!(
                report.alerts.iter().any(|a| a.sensor_id == i),
                s.health >= HealthIndex::AlmostDefective
            );
        }
    }
    assert!(seen.iter().all(|&x| x), "health classes seen: {seen:?}");
}
