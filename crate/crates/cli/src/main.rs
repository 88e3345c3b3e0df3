//! `sensor-health` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sensor_health::catalog::{default_catalog, HealthIndex, SensorCatalog, SensorFrame};
use sensor_health::monitor::{self, StreamRecord, DEFAULT_ALERT_THRESHOLD};
use sensor_health::preprocess;
use sensor_health::synthetic::{self, ScenarioConfig};
use sensor_health::telemetry::{self, CsvFrames, JsonFrames};
use sensor_health::training::{self, PipelineConfig};
use sensor_health::{Error, ModelArtifact};

#[derive(Parser)]
#[command(
    name = "sensor-health",
    version,
    about = "Autoencoder-based ECU sensor health monitor"
)]
struct Cli {
    /// Sensor catalog (TOML); the built-in twenty-sensor catalog when omitted.
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic telemetry and its ground truth.
    Generate {
        /// Scenario configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Telemetry CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth CSV to write.
        #[arg(long)]
        truth: PathBuf,
    },
    /// Fit the normalizer, autoencoder, residual profile and forests.
    Train {
        /// Telemetry CSV.
        #[arg(long)]
        data: PathBuf,
        /// Training configuration (TOML); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Sets the split, autoencoder and forest seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// Model artifact to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Report reconstruction and forest quality on telemetry.
    Evaluate {
        /// Model artifact written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Telemetry CSV.
        #[arg(long)]
        data: PathBuf,
        /// Ground-truth CSV; adds a detection benchmark.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a frame stream and write per-frame reports.
    Monitor {
        /// Model artifact written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Frame source; standard input when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Input encoding; inferred from the file extension when omitted.
        #[arg(long, value_enum)]
        format: Option<InputFormat>,
        /// Report lines (JSON); standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Alert log (JSON lines).
        #[arg(long)]
        alerts: Option<PathBuf>,
        /// Lowest health class that raises an alert.
        #[arg(long, value_parser = parse_health, default_value_t = DEFAULT_ALERT_THRESHOLD)]
        alert_threshold: HealthIndex,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum InputFormat {
    Csv,
    Jsonl,
}

fn parse_health(s: &str) -> Result<HealthIndex, String> {
    s.parse::<HealthIndex>().map_err(|_| {
        let names: Vec<&str> = HealthIndex::ALL.iter().map(|h| h.as_str()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

enum Failure {
    Data(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Data(_) => 2,
            Failure::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Data(m) | Failure::Internal(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let internal = match &e {
            Error::DivergedLoss { .. } => true,
            Error::Stage { source, .. } => matches!(**source, Error::DivergedLoss { .. }),
            _ => false,
        };
        if internal {
            Failure::Internal(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

fn write_failure(path: &Path, e: io::Error) -> Failure {
    Failure::Internal(format!("{}: {e}", path.display()))
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    let catalog = Arc::new(match &cli.catalog {
        Some(path) => SensorCatalog::load(path)?,
        None => default_catalog(),
    });
    match cli.command {
        Command::Generate {
            config,
            seed,
            out,
            truth,
        } => generate(catalog, &config, seed, &out, &truth),
        Command::Train {
            data,
            config,
            seed,
            out,
        } => train(catalog, &data, config.as_deref(), seed, &out),
        Command::Evaluate {
            model,
            data,
            truth,
            out,
        } => evaluate(catalog, &model, &data, truth.as_deref(), out.as_deref()),
        Command::Monitor {
            model,
            input,
            format,
            out,
            alerts,
            alert_threshold,
        } => monitor(
            &catalog,
            &model,
            input.as_deref(),
            format,
            out.as_deref(),
            alerts.as_deref(),
            alert_threshold,
        ),
    }
}

fn generate(
    catalog: Arc<SensorCatalog>,
    config: &Path,
    seed: Option<u64>,
    out: &Path,
    truth: &Path,
) -> CmdResult {
    let mut scenario = ScenarioConfig::load(config)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let (dataset, ground_truth) = synthetic::generate(catalog.clone(), &scenario)?;
    telemetry::save_dataset(out, &dataset).map_err(internal)?;
    synthetic::save_truth(truth, &catalog, &ground_truth).map_err(internal)?;
    println!(
        "wrote {} frames to {} and ground truth to {}",
        dataset.len(),
        out.display(),
        truth.display()
    );
    Ok(())
}

fn internal(e: Error) -> Failure {
    Failure::Internal(e.to_string())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"))
}

fn train(
    catalog: Arc<SensorCatalog>,
    data: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
) -> CmdResult {
    let mut pipeline_config = match config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = seed {
        pipeline_config.set_seed(seed);
    }
    let dataset = telemetry::load_dataset(data, catalog)?;
    let trained = training::train_pipeline(&dataset, &pipeline_config)?;

    let mut stdout = io::stdout().lock();
    let rows = &trained.artifact.metadata.rows;
    let _ = writeln!(
        stdout,
        "frames: {} read, {} after cleansing; train {}, validation {}, test {}",
        rows.input, rows.cleansed, rows.train, rows.validation, rows.test
    );
    let _ = writeln!(
        stdout,
        "autoencoder: {} epochs, best epoch {}",
        trained.trace.epochs.len(),
        trained.trace.best_epoch
    );
    let _ = writeln!(
        stdout,
        "{:>2}  {:<28} {:>10} {:>10} {:>10} {:>3}",
        "id", "sensor", "ae_r2", "mu", "sigma", "k"
    );
    for row in &trained.summary {
        let _ = writeln!(
            stdout,
            "{:>2}  {:<28} {:>10} {:>10.6} {:>10.6} {:>3}",
            row.sensor,
            row.name,
            fmt_opt(row.autoencoder_r2),
            row.mu,
            row.sigma,
            row.k
        );
    }
    trained.artifact.save(out).map_err(internal)?;
    let _ = writeln!(stdout, "wrote {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct EvaluationReport {
    catalog_fingerprint: String,
    frames: usize,
    sensors: Vec<training::EvaluationRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    benchmark: Option<Vec<synthetic::SensorBenchmark>>,
}

fn evaluate(
    catalog: Arc<SensorCatalog>,
    model: &Path,
    data: &Path,
    truth: Option<&Path>,
    out: Option<&Path>,
) -> CmdResult {
    let artifact = ModelArtifact::load(model, Some(&catalog))?;
    let raw = telemetry::load_dataset(data, catalog.clone())?;
    let (clean, _) = preprocess::cleanse(&raw);
    if clean.is_empty() {
        return Err(Failure::Data(format!(
            "{}: no usable frames",
            data.display()
        )));
    }
    let normalized = artifact.normalizer.normalize_dataset(&clean);
    let rows = training::evaluate(&artifact, &normalized)?;

    let benchmark = match truth {
        Some(path) => {
            let ground_truth = synthetic::load_truth(path, &catalog)?;
            let pipeline = artifact.pipeline()?;
            let reports = raw
                .frames()
                .iter()
                .map(|f| pipeline.process_frame(f))
                .collect::<Result<Vec<_>, _>>()?;
            Some(synthetic::benchmark_report(
                &monitor::detections(&reports),
                &ground_truth,
            )?)
        }
        None => None,
    };

    let mut stdout = io::stdout().lock();
    let _ = writeln!(
        stdout,
        "{:>2}  {:<28} {:>10} {:>10} {:>10} {:>3}",
        "id", "sensor", "ae_r2", "rf_mae", "rf_r2", "k"
    );
    for r in &rows {
        let _ = writeln!(
            stdout,
            "{:>2}  {:<28} {:>10} {:>10.6} {:>10} {:>3}",
            r.sensor,
            r.name,
            fmt_opt(r.autoencoder_r2),
            r.forest_mae,
            fmt_opt(r.forest_r2),
            r.k
        );
    }
    if let Some(bench) = &benchmark {
        let _ = writeln!(
            stdout,
            "\n{:>2}  {:>9} {:>9} {:>9} {:>12}",
            "id", "precision", "recall", "latency", "subst_mae"
        );
        for b in bench {
            let _ = writeln!(
                stdout,
                "{:>2}  {:>9.4} {:>9} {:>9} {:>12}",
                b.sensor,
                b.precision,
                fmt_opt(b.recall),
                fmt_opt(b.mean_latency),
                fmt_opt(b.substitution_mae)
            );
        }
    }

    if let Some(path) = out {
        let report = EvaluationReport {
            catalog_fingerprint: artifact.catalog_fingerprint.clone(),
            frames: normalized.len(),
            sensors: rows,
            benchmark,
        };
        let mut text =
            serde_json::to_string_pretty(&report).map_err(|e| Failure::Internal(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| write_failure(path, e))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct AlertRecord<'a> {
    timestamp_ms: i64,
    sensor_id: usize,
    sensor: &'a str,
    health: HealthIndex,
    message: &'a str,
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| write_failure(p, e))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn frame_source(
    catalog: &SensorCatalog,
    input: Option<&Path>,
    format: Option<InputFormat>,
) -> Result<Box<dyn Iterator<Item = sensor_health::Result<SensorFrame>>>, Failure> {
    let format = format.unwrap_or_else(|| {
        match input.and_then(|p| p.extension()).and_then(|e| e.to_str()) {
            Some("jsonl" | "json" | "ndjson") => InputFormat::Jsonl,
            _ => InputFormat::Csv,
        }
    });
    let reader: Box<dyn BufRead> = match input {
        Some(path) => {
            Box::new(BufReader::new(File::open(path).map_err(|e| {
                Failure::Data(format!("{}: {e}", path.display()))
            })?))
        }
        None => Box::new(BufReader::new(io::stdin())),
    };
    Ok(match format {
        InputFormat::Csv => Box::new(CsvFrames::new(reader, catalog)?),
        InputFormat::Jsonl => Box::new(JsonFrames::new(reader)),
    })
}

fn monitor(
    catalog: &SensorCatalog,
    model: &Path,
    input: Option<&Path>,
    format: Option<InputFormat>,
    out: Option<&Path>,
    alerts: Option<&Path>,
    threshold: HealthIndex,
) -> CmdResult {
    let artifact = ModelArtifact::load(model, Some(catalog))?;
    let pipeline = artifact.pipeline()?.with_alert_threshold(threshold);
    let frames = frame_source(catalog, input, format)?;

    let out_name = out.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf);
    let mut report_sink = open_output(out)?;
    let alerts_name = alerts.map(Path::to_path_buf);
    let mut alert_sink = match alerts {
        Some(p) => Some(BufWriter::new(
            File::create(p).map_err(|e| write_failure(p, e))?,
        )),
        None => None,
    };

    let (mut reports, mut errors, mut alert_count) = (0usize, 0usize, 0usize);
    for record in pipeline.process_stream(frames) {
        let line = serde_json::to_string(&record).map_err(|e| Failure::Internal(e.to_string()))?;
        writeln!(report_sink, "{line}").map_err(|e| write_failure(&out_name, e))?;
        match &record {
            StreamRecord::Report(report) => {
                reports += 1;
                if let Some(sink) = alert_sink.as_mut() {
                    for alert in &report.alerts {
                        let entry = AlertRecord {
                            timestamp_ms: report.timestamp_ms,
                            sensor_id: alert.sensor_id,
                            sensor: &catalog.sensors()[alert.sensor_id].name,
                            health: alert.health,
                            message: &alert.message,
                        };
                        let text = serde_json::to_string(&entry)
                            .map_err(|e| Failure::Internal(e.to_string()))?;
                        let path = alerts_name.as_deref().unwrap_or(Path::new("<alerts>"));
                        writeln!(sink, "{text}").map_err(|e| write_failure(path, e))?;
                    }
                }
                alert_count += report.alerts.len();
            }
            StreamRecord::Error { index, message, .. } => {
                errors += 1;
                eprintln!("warning: frame {index} skipped: {message}");
            }
        }
    }
    report_sink
        .flush()
        .map_err(|e| write_failure(&out_name, e))?;
    if let Some(mut sink) = alert_sink {
        let path = alerts_name.unwrap_or_default();
        sink.flush().map_err(|e| write_failure(&path, e))?;
    }
    eprintln!("{reports} frames scored, {errors} rejected, {alert_count} alerts");
    Ok(())
}
