//! Telemetry CSV and line-delimited JSON frame I/O.
//!
//! CSV layout: a header `timestamp_ms,<sensor names in catalog order>`, then
//! one frame per line. Empty cells and `NaN` read as non-finite values so that
//! cleansing can drop incomplete records.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use crate::catalog::{Dataset, SensorCatalog, SensorFrame};
use crate::error::{Error, Result};

pub const TIMESTAMP_COLUMN: &str = "timestamp_ms";

pub fn header(catalog: &SensorCatalog) -> Vec<String> {
    std::iter::once(TIMESTAMP_COLUMN.to_string())
        .chain(catalog.names().map(str::to_string))
        .collect()
}

fn parse_cell(cell: &str) -> Option<f64> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Some(f64::NAN);
    }
    cell.parse().ok()
}

fn check_header(found: &csv::StringRecord, catalog: &SensorCatalog) -> Result<()> {
    let expected = header(catalog);
    let found: Vec<&str> = found.iter().map(str::trim).collect();
    if found != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "header does not match catalog (expected `{}`)",
                expected.join(",")
            ),
        });
    }
    Ok(())
}

fn record_to_frame(record: &csv::StringRecord) -> Result<SensorFrame> {
    let line = record.position().map_or(0, |p| p.line());
    let mut cells = record.iter();
    let ts = cells.next().unwrap_or("");
    let timestamp_ms = ts.trim().parse::<i64>().map_err(|_| Error::Parse {
        line,
        message: format!("bad timestamp `{ts}`"),
    })?;
    let values = cells
        .enumerate()
        .map(|(i, c)| {
            parse_cell(c).ok_or_else(|| Error::Parse {
                line,
                message: format!("bad value `{c}` in column {}", i + 1),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SensorFrame::new(timestamp_ms, values))
}

/// Streaming CSV frame reader. Rows of the wrong width are yielded as frames
/// (structural checks happen downstream); unparsable cells yield errors.
pub struct CsvFrames<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
}

impl<R: Read> CsvFrames<R> {
    pub fn new(reader: R, catalog: &SensorCatalog) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .has_headers(true)
            .from_reader(reader);
        check_header(rdr.headers()?, catalog)?;
        Ok(Self {
            records: rdr.into_records(),
        })
    }
}

impl<R: Read> Iterator for CsvFrames<R> {
    type Item = Result<SensorFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        let record = self.records.next()?;
        Some(
            record
                .map_err(Error::from)
                .and_then(|r| record_to_frame(&r)),
        )
    }
}

#[derive(Deserialize)]
struct JsonFrame {
    timestamp_ms: i64,
    values: Vec<Option<f64>>,
}

/// Line-delimited JSON frames: `{"timestamp_ms": 0, "values": [..]}`; `null`
/// values read as non-finite.
pub struct JsonFrames<R: BufRead> {
    lines: std::io::Lines<R>,
    line: u64,
}

impl<R: BufRead> JsonFrames<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line: 0,
        }
    }
}

impl<R: BufRead> Iterator for JsonFrames<R> {
    type Item = Result<SensorFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(Error::io("<stream>", e))),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            return Some(
                serde_json::from_str::<JsonFrame>(&text)
                    .map(|f| {
                        let values = f
                            .values
                            .into_iter()
                            .map(|v| v.unwrap_or(f64::NAN))
                            .collect();
                        SensorFrame::new(f.timestamp_ms, values)
                    })
                    .map_err(|e| Error::Parse {
                        line: self.line,
                        message: e.to_string(),
                    }),
            );
        }
    }
}

/// Reads a whole telemetry CSV into a dataset. Any malformed row is an error.
pub fn read_dataset<R: Read>(reader: R, catalog: Arc<SensorCatalog>) -> Result<Dataset> {
    let frames = CsvFrames::new(reader, &catalog)?
        .enumerate()
        .map(|(i, frame)| {
            let frame = frame?;
            if frame.values.len() != catalog.len() {
                return Err(Error::Parse {
                    line: i as u64 + 2,
                    message: format!(
                        "expected {} values, found {}",
                        catalog.len(),
                        frame.values.len()
                    ),
                });
            }
            Ok(frame)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(catalog, frames)
}

pub fn load_dataset(path: &Path, catalog: Arc<SensorCatalog>) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file), catalog)
}

fn format_value(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

pub fn write_dataset<W: Write>(writer: W, dataset: &Dataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(header(dataset.catalog()))?;
    for frame in dataset.frames() {
        let row = std::iter::once(frame.timestamp_ms.to_string())
            .chain(frame.values.iter().map(|&v| format_value(v)));
        wtr.write_record(row)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(std::io::BufWriter::new(file), dataset)
}
