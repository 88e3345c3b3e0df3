//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sensor_health::autoencoder::{self, AutoencoderModel};
use sensor_health::calibration::ResidualProfile;
use sensor_health::catalog::{default_catalog, HealthIndex, SensorFrame};
use sensor_health::forest::{fit_tree, Samples, SplitFeatures, TreeNode, TreeParams};
use sensor_health::metrics::pearson;
use sensor_health::monitor::MonitorReport;
use sensor_health::preprocess::{split, NormalizationParams};
use sensor_health::synthetic::{generate, FaultKind, FaultSpec, GroundTruth, ScenarioConfig};
use sensor_health::training::{
    self, train_pipeline, EvaluationRow, PipelineConfig, TrainedPipeline,
};
use sensor_health::{Dataset, SensorCatalog};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn catalog() -> Arc<SensorCatalog> {
    Arc::new(default_catalog())
}

// ---------------------------------------------------------------------------
// 1. Gradient check

fn gradient_check() -> Outcome {
    const MODELS: u64 = 10;
    const PARAMS: usize = 50;
    const H: f64 = 1e-5;
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for m in 0..MODELS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + m);
        let model = AutoencoderModel::with_widths(20, autoencoder::BOTTLENECK, m);
        let mut params = model.params();
        for p in params.iter_mut() {
            *p += rng.random_range(-0.5..0.5);
        }
        let mut model = model;
        model.set_params(&params);
        let data: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..20).map(|_| rng.random::<f64>()).collect())
            .collect();
        let batch: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
        let analytic = model.gradient(&batch).unwrap().flatten();
        for _ in 0..PARAMS {
            let k = rng.random_range(0..params.len());
            let mut probe = model.clone();
            let mut p = params.clone();
            p[k] = params[k] + H;
            probe.set_params(&p);
            let up = probe.loss(&batch).unwrap();
            p[k] = params[k] - H;
            probe.set_params(&p);
            let down = probe.loss(&batch).unwrap();
            let numeric = (up - down) / (2.0 * H);
            // Below 1e-6 the central difference is dominated by rounding in
            // the loss, so the comparison falls back to absolute error.
            let rel =
                (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= 1e-4 && elapsed < Duration::from_secs(10),
        format!(
            "worst relative error {worst:.2e} over {} parameters, {elapsed:.2?}",
            MODELS as usize * PARAMS
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Normalization round trip

fn normalization_round_trip() -> Outcome {
    let cat = catalog();
    let (ds, _) = generate(cat.clone(), &ScenarioConfig::new(2000, 3)).unwrap();
    let params = NormalizationParams::fit(&ds).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for spec in cat.sensors() {
        let r = params.ranges[spec.id];
        if r.max == r.min {
            continue;
        }
        for _ in 0..10_000 {
            let x = rng.random_range(spec.physical_min..=spec.physical_max);
            let back = params.denormalize_value(spec.id, params.normalize_value(spec.id, x));
            let scale = x.abs().max(r.min.abs()).max(r.max.abs());
            worst = worst.max((back - x).abs() / scale);
            checked += 1;
        }
    }
    check(
        worst <= 1e-12,
        format!("worst relative error {worst:.2e} over {checked} values"),
    )
}

// ---------------------------------------------------------------------------
// 3. Split proportions

fn split_proportions() -> Outcome {
    let frames: Vec<SensorFrame> = (0..1000)
        .map(|i| {
            SensorFrame::new(
                i,
                default_catalog()
                    .sensors()
                    .iter()
                    .map(|s| s.physical_min)
                    .collect(),
            )
        })
        .collect();
    let ds = Dataset::new(catalog(), frames).unwrap();
    let parts = split(&ds, 42).unwrap();
    let mut seen: Vec<i64> = [&parts.train, &parts.validation, &parts.test]
        .iter()
        .flat_map(|d| d.frames().iter().map(|f| f.timestamp_ms))
        .collect();
    seen.sort_unstable();
    let complete = seen == (0..1000).collect::<Vec<_>>();
    let (tr, va, te) = (parts.train.len(), parts.validation.len(), parts.test.len());
    check(
        te == 330 && (167..=168).contains(&va) && complete,
        format!("train {tr}, validation {va}, test {te}, disjoint and complete: {complete}"),
    )
}

// ---------------------------------------------------------------------------
// 4. Band frequencies of normal residuals

fn band_frequencies() -> Outcome {
    const N: usize = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let residuals: Vec<Vec<f64>> = (0..N)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            vec![(10.0 + z).max(0.0)]
        })
        .collect();
    let profile = ResidualProfile::fit(&residuals).unwrap();
    let stats = profile.sensors[0];
    let mut counts = [0usize; 5];
    for r in &residuals {
        counts[stats.classify(r[0]).unwrap() as usize] += 1;
    }
    let expected = [68.27, 27.18, 4.28, 0.26, 0.0063];
    let observed: Vec<f64> = counts
        .iter()
        .map(|&c| 100.0 * c as f64 / N as f64)
        .collect();
    let ok = observed
        .iter()
        .zip(expected)
        .all(|(o, e)| (o - e).abs() <= 1.0);
    check(
        ok,
        format!(
            "observed % {:?} vs expected % {expected:?}",
            observed
                .iter()
                .map(|o| (o * 1e4).round() / 1e4)
                .collect::<Vec<_>>()
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. Stump oracle

struct Stump {
    feature: usize,
    threshold: f64,
    sse: f64,
}

fn sse(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum()
}

/// Every feature and every midpoint between distinct neighbouring values,
/// scored by the summed squared error of the two sides.
fn stump_candidates(rows: &[Vec<f64>], y: &[f64]) -> Vec<Stump> {
    let mut out = Vec::new();
    for feature in 0..rows[0].len() {
        let mut xs: Vec<f64> = rows.iter().map(|r| r[feature]).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        for w in xs.windows(2) {
            let threshold = w[0] + (w[1] - w[0]) / 2.0;
            let (l, r): (Vec<f64>, Vec<f64>) = (
                (0..y.len())
                    .filter(|&i| rows[i][feature] <= threshold)
                    .map(|i| y[i])
                    .collect(),
                (0..y.len())
                    .filter(|&i| rows[i][feature] > threshold)
                    .map(|i| y[i])
                    .collect(),
            );
            out.push(Stump {
                feature,
                threshold,
                sse: sse(&l) + sse(&r),
            });
        }
    }
    out
}

fn stump_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut unique, mut tied, mut leaves) = (0, 0, 0);
    for case in 0..100 {
        let n = rng.random_range(2..=50);
        let d = rng.random_range(1..=6);
        let coarse = rng.random_bool(0.3);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        let v: f64 = rng.random_range(-10.0..10.0);
                        if coarse {
                            v.round()
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();

        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let samples = Samples {
            rows: &refs,
            targets: &y,
        };
        let params = TreeParams {
            max_depth: 1,
            min_samples_leaf: 1,
            features_per_split: SplitFeatures::All,
        };
        let indices: Vec<usize> = (0..n).collect();
        let features: Vec<usize> = (0..d).collect();
        let tree = fit_tree(samples, &indices, &features, params, case).unwrap();

        let candidates = stump_candidates(&rows, &y);
        let parent = sse(&y);
        let best_sse = candidates
            .iter()
            .map(|c| c.sse)
            .fold(f64::INFINITY, f64::min);
        let tol = 1e-9 * parent.max(1e-300);
        if candidates.is_empty() || best_sse >= parent - tol {
            if !matches!(tree.nodes()[0], TreeNode::Leaf { .. }) {
                return Err(format!(
                    "case {case}: oracle finds no useful split, tree split anyway"
                ));
            }
            leaves += 1;
            continue;
        }
        let TreeNode::Split {
            feature, threshold, ..
        } = tree.nodes()[0]
        else {
            return Err(format!(
                "case {case}: tree is a leaf, oracle sse {best_sse} < {parent}"
            ));
        };
        let chosen = candidates
            .iter()
            .find(|c| c.feature == feature && c.threshold == threshold)
            .ok_or_else(|| format!("case {case}: tree threshold {threshold} on feature {feature} is not a candidate"))?;
        let optimal: Vec<&Stump> = candidates
            .iter()
            .filter(|c| c.sse <= best_sse + tol)
            .collect();
        if optimal.len() == 1 {
            unique += 1;
            if chosen.feature != optimal[0].feature || chosen.threshold != optimal[0].threshold {
                return Err(format!(
                    "case {case}: tree ({feature}, {threshold}) vs oracle ({}, {})",
                    optimal[0].feature, optimal[0].threshold
                ));
            }
        } else {
            tied += 1;
            if chosen.sse > best_sse + tol {
                return Err(format!(
                    "case {case}: tree sse {} vs optimum {best_sse}",
                    chosen.sse
                ));
            }
        }
        let leaf_means: Vec<f64> = tree.nodes()[1..]
            .iter()
            .map(|node| match node {
                TreeNode::Leaf { value } => *value,
                TreeNode::Split { .. } => f64::NAN,
            })
            .collect();
        let left: Vec<f64> = (0..n)
            .filter(|&i| rows[i][feature] <= threshold)
            .map(|i| y[i])
            .collect();
        let right: Vec<f64> = (0..n)
            .filter(|&i| rows[i][feature] > threshold)
            .map(|i| y[i])
            .collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        // Same values, summed in a different order.
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
        if leaf_means.len() != 2
            || !close(leaf_means[0], mean(&left))
            || !close(leaf_means[1], mean(&right))
        {
            return Err(format!("case {case}: leaf values {leaf_means:?}"));
        }
    }
    Ok(format!(
        "100 datasets: {unique} unique optima matched exactly, {tied} tied optima matched in sse, {leaves} unsplittable"
    ))
}

// ---------------------------------------------------------------------------
// Shared synthetic benchmark for criteria 6 to 10

const TRAIN_SEED: u64 = 1;
const MONITOR_SEED: u64 = 2;
const PIPELINE_SEED: u64 = 7;

/// Sensors whose synthetic signal is a function of the driver-demand and
/// vehicle-speed state alone, which their selected peers also carry.
const FUNCTIONALLY_DEPENDENT: [usize; 5] = [1, 3, 4, 6, 14];

struct Benchmark {
    train_raw: Dataset,
    trained: TrainedPipeline,
    train_time: Duration,
    held_out: Vec<EvaluationRow>,
    scenario: ScenarioConfig,
    stream: Dataset,
    truth: GroundTruth,
    reports: Vec<MonitorReport>,
    monitor_time: Duration,
}

fn fault_scenario() -> ScenarioConfig {
    let window = |sensor_id, kind, start: usize| FaultSpec {
        sensor_id,
        kind,
        start_frame: start,
        end_frame: start + 999,
    };
    let mut cfg = ScenarioConfig::new(20_000, MONITOR_SEED);
    cfg.faults = vec![
        window(6, FaultKind::StuckAt { value: 0.0 }, 500),
        window(3, FaultKind::StuckAt { value: 6500.0 }, 2000),
        window(7, FaultKind::Offset { delta: 20.0 }, 3500),
        window(1, FaultKind::StuckAt { value: 15.0 }, 5000),
        window(4, FaultKind::Offset { delta: 1.0 }, 8000),
        window(14, FaultKind::Offset { delta: -25.0 }, 11000),
        window(9, FaultKind::Offset { delta: -1.5 }, 14000),
        window(5, FaultKind::Offset { delta: 3.0 }, 17000),
    ];
    cfg
}

fn run_benchmark() -> Benchmark {
    let (train_raw, _) = generate(catalog(), &ScenarioConfig::new(20_000, TRAIN_SEED)).unwrap();
    let start = Instant::now();
    let trained = train_pipeline(&train_raw, &PipelineConfig::seeded(PIPELINE_SEED)).unwrap();
    let train_time = start.elapsed();
    let held_out = training::evaluate(&trained.artifact, &trained.splits.test).unwrap();

    let scenario = fault_scenario();
    let (stream, truth) = generate(catalog(), &scenario).unwrap();
    let pipeline = trained.artifact.pipeline().unwrap();
    let start = Instant::now();
    let reports = stream
        .frames()
        .iter()
        .map(|f| pipeline.process_frame(f).unwrap())
        .collect();
    let monitor_time = start.elapsed();
    Benchmark {
        train_raw,
        trained,
        train_time,
        held_out,
        scenario,
        stream,
        truth,
        reports,
        monitor_time,
    }
}

fn span(b: &Benchmark, sensor: usize) -> f64 {
    let r = b.trained.artifact.normalizer.ranges[sensor];
    r.max - r.min
}

// ---------------------------------------------------------------------------
// 6. Detection

fn detection(b: &Benchmark) -> Outcome {
    let profile = &b.trained.artifact.profile;
    let (mut eligible, mut hits) = (0usize, 0usize);
    let mut per_fault = Vec::new();
    for fault in &b.scenario.faults {
        let s = fault.sensor_id;
        let stats = profile.sensors[s];
        let floor = stats.mu + 6.0 * stats.sigma;
        let (mut e, mut h) = (0usize, 0usize);
        for i in fault.start_frame..=fault.end_frame {
            let magnitude =
                (b.stream.frames()[i].values[s] - b.truth.true_values[i][s]).abs() / span(b, s);
            if magnitude < floor {
                continue;
            }
            e += 1;
            if b.reports[i].sensors[s].health == HealthIndex::Defective {
                h += 1;
            }
        }
        per_fault.push(format!("s{s} {h}/{e}"));
        eligible += e;
        hits += h;
    }
    let recall = hits as f64 / eligible as f64;

    // Frames with no active fault on any sensor; inside a fault window the
    // reconstruction of the other sensors is disturbed too.
    let mut by_sensor = [0usize; 20];
    let mut clean = 0usize;
    for (_, report) in b
        .reports
        .iter()
        .enumerate()
        .filter(|(i, _)| b.truth.is_clean(*i))
    {
        clean += report.sensors.len();
        for s in report
            .sensors
            .iter()
            .filter(|s| s.health == HealthIndex::Defective)
        {
            by_sensor[s.sensor_id] += 1;
        }
    }
    let false_defective: usize = by_sensor.iter().sum();
    let false_rate = false_defective as f64 / clean as f64;
    let clean_frames = clean / 20;
    let mut worst: Vec<(usize, usize)> = by_sensor.iter().copied().enumerate().collect();
    worst.sort_by_key(|&(_, n)| std::cmp::Reverse(n));
    let worst: Vec<String> = worst[..4]
        .iter()
        .map(|&(s, n)| format!("s{s} {:.2}%", 100.0 * n as f64 / clean_frames as f64))
        .collect();
    let runtime = b.train_time + b.monitor_time;
    check(
        recall >= 0.99 && false_rate <= 0.001 && runtime < Duration::from_secs(300),
        format!(
            "recall {recall:.4} ({hits}/{eligible}; {}), false-Defective {:.3}% ({false_defective}/{clean} readings in clean frames; worst {}), train {:.1?} + monitor {:.1?}",
            per_fault.join(", "),
            100.0 * false_rate,
            worst.join(", "),
            b.train_time,
            b.monitor_time
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. Regression quality on strongly correlated channels

fn regression_quality(b: &Benchmark) -> Outcome {
    let columns: Vec<Vec<f64>> = (0..20).map(|s| b.train_raw.column(s)).collect();
    let mut lines = Vec::new();
    let mut ok = true;
    for s in 0..20 {
        let strongest = (0..20)
            .filter(|&j| j != s)
            .map(|j| pearson(&columns[s], &columns[j]).abs())
            .fold(0.0, f64::max);
        if strongest < 0.9 {
            continue;
        }
        let row = &b.held_out[s];
        let (rf, ae) = (
            row.forest_r2.unwrap_or(f64::NAN),
            row.autoencoder_r2.unwrap_or(f64::NAN),
        );
        ok &= rf >= 0.95 && ae >= 0.95;
        lines.push(format!("s{s} rf {rf:.4} ae {ae:.4}"));
    }
    check(
        ok && !lines.is_empty(),
        format!("{} channels: {}", lines.len(), lines.join(", ")),
    )
}

// ---------------------------------------------------------------------------
// 8. Substitution accuracy

fn substitution_quality(b: &Benchmark) -> Outcome {
    let mut ok = true;
    let mut lines = Vec::new();
    for fault in b
        .scenario
        .faults
        .iter()
        .filter(|f| FUNCTIONALLY_DEPENDENT.contains(&f.sensor_id))
    {
        let s = fault.sensor_id;
        let bound = 3.0 * b.held_out[s].forest_mae * span(b, s);
        let frames = fault.start_frame..=fault.end_frame;
        let total = frames.clone().count();
        let within = frames
            .filter(|&i| {
                b.reports[i].sensors[s]
                    .substituted_value
                    .is_some_and(|v| (v - b.truth.true_values[i][s]).abs() <= bound)
            })
            .count();
        let share = within as f64 / total as f64;
        ok &= share >= 0.95;
        lines.push(format!("s{s} {share:.3}"));
    }
    check(
        ok,
        format!("share within 3x held-out MAE: {}", lines.join(", ")),
    )
}

// ---------------------------------------------------------------------------
// 9. Determinism

fn report_lines(reports: &[MonitorReport]) -> String {
    reports
        .iter()
        .map(|r| serde_json::to_string(r).unwrap() + "\n")
        .collect()
}

fn determinism(b: &Benchmark) -> Outcome {
    let again = train_pipeline(&b.train_raw, &PipelineConfig::seeded(PIPELINE_SEED)).unwrap();
    let artifact_same = again.artifact.to_json() == b.trained.artifact.to_json();
    let eval_again = training::evaluate(&again.artifact, &again.splits.test).unwrap();
    let eval_same =
        serde_json::to_string(&eval_again).unwrap() == serde_json::to_string(&b.held_out).unwrap();
    let pipeline = again.artifact.pipeline().unwrap();
    let reports: Vec<MonitorReport> = b
        .stream
        .frames()
        .iter()
        .map(|f| pipeline.process_frame(f).unwrap())
        .collect();
    let reports_same = report_lines(&reports) == report_lines(&b.reports);
    check(
        artifact_same && eval_same && reports_same,
        format!("artifact identical: {artifact_same}, evaluation identical: {eval_same}, reports identical: {reports_same}"),
    )
}

// ---------------------------------------------------------------------------
// 10. Target exclusion

fn target_exclusion(b: &Benchmark) -> Outcome {
    let artifact = &b.trained.artifact;
    let probes: Vec<&[f64]> = b.trained.splits.test.rows().into_iter().take(25).collect();
    let mut evaluations = 0usize;
    for forest in &artifact.forests.forests {
        let s = forest.target_sensor;
        let spec = &artifact.catalog.sensors()[s];
        let lo = artifact.normalizer.normalize_value(s, spec.physical_min);
        let hi = artifact.normalizer.normalize_value(s, spec.physical_max);
        for probe in &probes {
            let base = forest.predict(probe);
            let mut frame = probe.to_vec();
            for step in 0..=100 {
                frame[s] = lo + (hi - lo) * step as f64 / 100.0;
                if forest.predict(&frame).to_bits() != base.to_bits() {
                    return Err(format!(
                        "sensor {s}: prediction moved with its own value {}",
                        frame[s]
                    ));
                }
                evaluations += 1;
            }
        }
    }
    Ok(format!(
        "{evaluations} perturbed predictions across 20 forests, all unchanged"
    ))
}

// ---------------------------------------------------------------------------

fn run(label: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let (status, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{status} {label} [{:.1?}]: {detail}", start.elapsed());
    outcome.is_ok()
}

fn main() -> ExitCode {
    let mut passed = vec![
        run("AC1 gradient check", gradient_check),
        run("AC2 normalization round trip", normalization_round_trip),
        run("AC3 split proportions", split_proportions),
        run("AC4 health band frequencies", band_frequencies),
        run("AC5 stump oracle", stump_oracle),
    ];

    let bench = panic::catch_unwind(run_benchmark);
    match &bench {
        Ok(b) => {
            passed.push(run("AC6 synthetic detection", || detection(b)));
            passed.push(run("AC7 regression quality", || regression_quality(b)));
            passed.push(run("AC8 substitution quality", || substitution_quality(b)));
            passed.push(run("AC9 determinism", || determinism(b)));
            passed.push(run("AC10 target exclusion", || target_exclusion(b)));
        }
        Err(_) => {
            for label in ["AC6", "AC7", "AC8", "AC9", "AC10"] {
                println!("FAIL {label}: synthetic benchmark could not be built");
                passed.push(false);
            }
        }
    }

    let n_pass = passed.iter().filter(|&&p| p).count();
    println!("acceptance: {n_pass}/{} criteria passed", passed.len());
    if n_pass == passed.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
