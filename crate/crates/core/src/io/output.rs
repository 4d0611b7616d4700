//! Result files: labeled records, stays, metrics, departure histogram and the
//! run profile. Everything except the profile is byte-stable for identical
//! inputs.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::metrics::{MobilityMetrics, HISTOGRAM_BINS};
use crate::model::{LabeledRecord, LatLon, LocationRecord, Source, Stay, StayLabel};
use crate::pipeline::RunProfile;

use super::ingest::{record_fields, RECORD_COLUMNS};

pub const LABELED_FILE: &str = "labeled.csv";
pub const STAYS_FILE: &str = "stays.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const PROFILE_FILE: &str = "profile.json";

pub const LABEL_COLUMNS: [&str; 3] = ["stay_lat", "stay_lon", "stay_duration_min"];
pub const STAY_COLUMNS: [&str; 8] = [
    "device_id",
    "centroid_lat",
    "centroid_lon",
    "start",
    "end",
    "duration_min",
    "record_count",
    "source",
];
pub const HISTOGRAM_COLUMNS: [&str; 3] = ["bin_index", "start_hhmm", "count"];

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
}

/// Everything one run writes.
pub struct OutputSet<'a> {
    pub labeled: &'a [LabeledRecord],
    pub stays: &'a [Stay],
    /// `None` when no user has a stay; metrics.json then holds `null`.
    pub metrics: Option<&'a MobilityMetrics>,
    pub profile: Option<&'a RunProfile>,
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> OutputError + '_ {
    move |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), OutputError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn labeled_fields(l: &LabeledRecord) -> Vec<String> {
    let mut f = record_fields(&l.record).to_vec();
    f.push(l.stay_lat().to_string());
    f.push(l.stay_lon().to_string());
    f.push(l.stay_duration_min().to_string());
    f
}

pub fn stay_fields(s: &Stay) -> [String; 8] {
    [
        s.device_id.clone(),
        s.centroid.lat.to_string(),
        s.centroid.lon.to_string(),
        s.start.to_string(),
        s.end.to_string(),
        s.duration_min().to_string(),
        s.record_count.to_string(),
        s.source.as_str().to_string(),
    ]
}

/// `0830` for bin 17.
pub fn bin_start_hhmm(bin: usize) -> String {
    let minutes = bin * 30;
    format!("{:02}{:02}", minutes / 60, minutes % 60)
}

pub fn write_labeled(path: &Path, labeled: &[LabeledRecord]) -> Result<(), OutputError> {
    let header: Vec<&str> = RECORD_COLUMNS.iter().chain(&LABEL_COLUMNS).copied().collect();
    write_csv(path, &header, labeled.iter().map(labeled_fields))
}

pub fn write_stays(path: &Path, stays: &[Stay]) -> Result<(), OutputError> {
    write_csv(path, &STAY_COLUMNS, stays.iter().map(stay_fields))
}

pub fn write_histogram(path: &Path, metrics: Option<&MobilityMetrics>) -> Result<(), OutputError> {
    let rows = metrics.into_iter().flat_map(|m| {
        m.departure_histogram
            .iter()
            .enumerate()
            .map(|(i, c)| [i.to_string(), bin_start_hhmm(i), c.to_string()])
    });
    write_csv(path, &HISTOGRAM_COLUMNS, rows)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), OutputError> {
    let mut text = serde_json::to_string_pretty(value).expect("output types always serialize");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Writes the result files into `dir` (created if missing) and returns their
/// paths. The profile is skipped when absent.
pub fn write_outputs(dir: &Path, out: &OutputSet<'_>) -> Result<Vec<PathBuf>, OutputError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let p = dir.join(LABELED_FILE);
    write_labeled(&p, out.labeled)?;
    written.push(p);
    let p = dir.join(STAYS_FILE);
    write_stays(&p, out.stays)?;
    written.push(p);
    let p = dir.join(METRICS_FILE);
    write_json(&p, &out.metrics)?;
    written.push(p);
    let p = dir.join(HISTOGRAM_FILE);
    write_histogram(&p, out.metrics)?;
    written.push(p);
    if let Some(profile) = out.profile {
        let p = dir.join(PROFILE_FILE);
        write_json(&p, profile)?;
        written.push(p);
    }
    Ok(written)
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>, OutputError> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let found: Vec<String> = rdr.headers().map_err(csv_err(path))?.iter().map(String::from).collect();
    if found != header {
        return Err(OutputError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("header must be `{}`", header.join(",")),
        });
    }
    rdr.records()
        .map(|r| {
            let r = r.map_err(csv_err(path))?;
            Ok((r.position().map_or(0, |p| p.line()), r))
        })
        .collect()
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, row: &csv::StringRecord, i: usize) -> Result<T, OutputError> {
    row.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| OutputError::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("column {} is missing or malformed", i + 1),
    })
}

/// Inverse of [`write_labeled`]; a row with all three stay fields at -1 is
/// transient.
pub fn read_labeled(path: &Path) -> Result<Vec<LabeledRecord>, OutputError> {
    let header: Vec<&str> = RECORD_COLUMNS.iter().chain(&LABEL_COLUMNS).copied().collect();
    read_rows(path, &header)?
        .into_iter()
        .map(|(line, row)| {
            let record = LocationRecord::new(
                row.get(0).unwrap_or_default(),
                field(path, line, &row, 1)?,
                field(path, line, &row, 2)?,
                field(path, line, &row, 3)?,
                field(path, line, &row, 4)?,
            );
            let (lat, lon, dur): (f64, f64, f64) =
                (field(path, line, &row, 5)?, field(path, line, &row, 6)?, field(path, line, &row, 7)?);
            let t = LabeledRecord::TRANSIENT;
            let stay = (lat, lon, dur) != (t, t, t);
            Ok(LabeledRecord {
                record,
                stay: stay.then_some(StayLabel {
                    lat,
                    lon,
                    duration_min: dur,
                }),
            })
        })
        .collect()
}

pub fn read_stays(path: &Path) -> Result<Vec<Stay>, OutputError> {
    read_rows(path, &STAY_COLUMNS)?
        .into_iter()
        .map(|(line, row)| {
            let source: Source = field(path, line, &row, 7)?;
            Ok(Stay {
                device_id: row.get(0).unwrap_or_default().to_string(),
                centroid: LatLon::new(field(path, line, &row, 1)?, field(path, line, &row, 2)?),
                start: field(path, line, &row, 3)?,
                end: field(path, line, &row, 4)?,
                record_count: field(path, line, &row, 6)?,
                source,
            })
        })
        .collect()
}

pub fn read_histogram(path: &Path) -> Result<Vec<u64>, OutputError> {
    let rows = read_rows(path, &HISTOGRAM_COLUMNS)?;
    if !rows.is_empty() && rows.len() != HISTOGRAM_BINS {
        return Err(OutputError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected {HISTOGRAM_BINS} rows, found {}", rows.len()),
        });
    }
    rows.into_iter().map(|(line, row)| field(path, line, &row, 2)).collect()
}
