//! Records CSV ingestion and the GPS/cellular split.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime};
use thiserror::Error;

use crate::model::{DayTrajectory, LocationRecord};
use crate::par::Executor;

pub const RECORD_COLUMNS: [&str; 5] = ["device_id", "timestamp", "lat", "lon", "accuracy_m"];

/// Accuracy below this many metres marks a GPS record.
pub const DEFAULT_ACCURACY_SPLIT_M: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct IngestConfig {
    pub accuracy_split_m: f64,
    pub utc_offset_min: i64,
    /// Accept ISO-8601 UTC timestamps besides integer epoch seconds.
    pub iso_timestamps: bool,
    pub workers: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            accuracy_split_m: DEFAULT_ACCURACY_SPLIT_M,
            utc_offset_min: 0,
            iso_timestamps: false,
            workers: 0,
        }
    }
}

impl IngestConfig {
    pub fn utc_offset_s(&self) -> i64 {
        self.utc_offset_min * 60
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if !(self.accuracy_split_m.is_finite() && self.accuracy_split_m > 0.0) {
            return Err(IngestError::Config(format!(
                "accuracy split must be positive, got {}",
                self.accuracy_split_m
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Row {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("invalid ingest configuration: {0}")]
    Config(String),
}

/// Records grouped by device, each device's records sorted by time with
/// duplicate timestamps removed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub users: BTreeMap<String, Vec<LocationRecord>>,
    /// Size of the source data in bytes.
    pub input_bytes: u64,
}

impl Corpus {
    /// Of records sharing a device and timestamp, keeps the most accurate one
    /// (ties broken by coordinates).
    pub fn from_records(records: impl IntoIterator<Item = LocationRecord>, input_bytes: u64) -> Self {
        let mut users: BTreeMap<String, Vec<LocationRecord>> = BTreeMap::new();
        for r in records {
            users.entry(r.device_id.clone()).or_default().push(r);
        }
        for list in users.values_mut() {
            list.sort_by(|a, b| {
                a.timestamp
                    .cmp(&b.timestamp)
                    .then(a.accuracy.total_cmp(&b.accuracy))
                    .then(a.lat.total_cmp(&b.lat))
                    .then(a.lon.total_cmp(&b.lon))
            });
            list.dedup_by_key(|r| r.timestamp);
        }
        Self { users, input_bytes }
    }

    pub fn record_count(&self) -> usize {
        self.users.values().map(Vec::len).sum()
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn records(&self) -> impl Iterator<Item = &LocationRecord> {
        self.users.values().flatten()
    }

    pub fn day_trajectories(&self, utc_offset_s: i64) -> Vec<DayTrajectory> {
        self.users
            .values()
            .flat_map(|r| DayTrajectory::split(r, utc_offset_s))
            .collect()
    }

    /// (GPS, cellular) corpora; both keep the source byte count.
    pub fn split_by_accuracy(&self, threshold_m: f64) -> (Corpus, Corpus) {
        let mut gps = BTreeMap::new();
        let mut cellular = BTreeMap::new();
        for (user, records) in &self.users {
            let (g, c) = split_by_accuracy(records, threshold_m);
            if !g.is_empty() {
                gps.insert(user.clone(), g);
            }
            if !c.is_empty() {
                cellular.insert(user.clone(), c);
            }
        }
        let wrap = |users| Corpus {
            users,
            input_bytes: self.input_bytes,
        };
        (wrap(gps), wrap(cellular))
    }
}

/// Accuracy strictly below the threshold is GPS; at or above is cellular.
pub fn split_by_accuracy(records: &[LocationRecord], threshold_m: f64) -> (Vec<LocationRecord>, Vec<LocationRecord>) {
    records.iter().cloned().partition(|r| r.accuracy < threshold_m)
}

pub fn is_gps(record: &LocationRecord, threshold_m: f64) -> bool {
    record.accuracy < threshold_m
}

fn parse_timestamp(field: &str, iso: bool) -> Result<i64, String> {
    if let Ok(t) = field.parse::<i64>() {
        return Ok(t);
    }
    if iso {
        if let Ok(dt) = DateTime::parse_from_rfc3339(field) {
            return Ok(dt.timestamp());
        }
        if let Ok(dt) = NaiveDateTime::parse_from_str(field, "%Y-%m-%dT%H:%M:%S") {
            return Ok(dt.and_utc().timestamp());
        }
        if let Ok(dt) = NaiveDateTime::parse_from_str(field, "%Y-%m-%d %H:%M:%S") {
            return Ok(dt.and_utc().timestamp());
        }
        return Err(format!("timestamp `{field}` is neither epoch seconds nor ISO-8601 UTC"));
    }
    Err(format!("timestamp `{field}` is not integer epoch seconds"))
}

fn parse_f64(name: &str, field: &str) -> Result<f64, String> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| format!("{name} `{field}` is not a number"))
}

fn parse_row(row: &csv::StringRecord, iso: bool) -> Result<LocationRecord, String> {
    if row.len() != RECORD_COLUMNS.len() {
        return Err(format!("expected {} fields, found {}", RECORD_COLUMNS.len(), row.len()));
    }
    let device = row[0].trim();
    if device.is_empty() {
        return Err("device_id is empty".into());
    }
    let r = LocationRecord::new(
        device,
        parse_timestamp(row[1].trim(), iso)?,
        parse_f64("lat", &row[2])?,
        parse_f64("lon", &row[3])?,
        parse_f64("accuracy_m", &row[4])?,
    );
    if let Some(field) = r.invalid_field() {
        let value = match field {
            "lat" => r.lat.to_string(),
            "lon" => r.lon.to_string(),
            "accuracy_m" => r.accuracy.to_string(),
            _ => r.timestamp.to_string(),
        };
        return Err(format!("{field} = {value} is out of range"));
    }
    Ok(r)
}

/// Reads one records CSV; an empty file yields no records.
pub fn read_records_file(path: &Path, cfg: &IngestConfig) -> Result<(Vec<LocationRecord>, u64), IngestError> {
    let io_err = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let bytes = file.metadata().map_err(io_err)?.len();
    if bytes == 0 {
        return Ok((Vec::new(), 0));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
    let row_err = |line: u64, message: String| IngestError::Row {
        path: path.to_path_buf(),
        line,
        message,
    };
    let headers = rdr.headers().map_err(|e| row_err(1, e.to_string()))?;
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if names != RECORD_COLUMNS {
        return Err(row_err(
            1,
            format!("header must be `{}`, found `{}`", RECORD_COLUMNS.join(","), names.join(",")),
        ));
    }
    let mut out = Vec::new();
    let mut row = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {
                let line = row.position().map_or(0, |p| p.line());
                out.push(parse_row(&row, cfg.iso_timestamps).map_err(|m| row_err(line, m))?);
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                return Err(row_err(line, e.to_string()));
            }
        }
    }
    Ok((out, bytes))
}

/// Reads every file (in parallel) and groups the records by device.
pub fn read_records(paths: &[PathBuf], cfg: &IngestConfig) -> Result<Corpus, IngestError> {
    cfg.validate()?;
    let exec = Executor::new(cfg.workers);
    let parts = exec.map(paths, |p| read_records_file(p, cfg));
    let mut records = Vec::new();
    let mut bytes = 0;
    for part in parts {
        let (r, b) = part?;
        records.extend(r);
        bytes += b;
    }
    Ok(Corpus::from_records(records, bytes))
}

/// Writes records in the input CSV format, in corpus order.
pub fn write_records<'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a LocationRecord>,
) -> Result<u64, std::io::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RECORD_COLUMNS)?;
    for r in records {
        w.write_record(record_fields(r))?;
    }
    w.flush()?;
    Ok(std::fs::metadata(path)?.len())
}

pub(crate) fn record_fields(r: &LocationRecord) -> [String; 5] {
    [
        r.device_id.clone(),
        r.timestamp.to_string(),
        r.lat.to_string(),
        r.lon.to_string(),
        r.accuracy.to_string(),
    ]
}

/// Bytes the record occupies as a CSV line.
pub fn csv_line_len(r: &LocationRecord) -> u64 {
    let fields = record_fields(r);
    fields.iter().map(|f| f.len() as u64).sum::<u64>() + fields.len() as u64
}
