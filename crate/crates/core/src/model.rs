//! Core domain types and the geodesic primitives every stage shares.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius (IUGG) in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("empty input")]
    EmptyInput,
    #[error("records are not sorted by timestamp (index {index})")]
    UnsortedInput { index: usize },
    #[error("{field} = {value} is out of range [{min}, {max}]")]
    OutOfRange {
        field: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("{field} must be a positive finite number, got {value}")]
    NotPositive { field: &'static str, value: f64 },
}

/// A latitude/longitude pair in degrees (WGS84).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub const fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }

    pub fn distance_km(&self, other: &LatLon) -> f64 {
        haversine_km(*self, *other)
    }
}

/// Great-circle distance on a sphere of radius [`EARTH_RADIUS_KM`].
pub fn haversine_km(a: LatLon, b: LatLon) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    // rounding can push h a hair above 1 for antipodal points
    2.0 * EARTH_RADIUS_KM * h.clamp(0.0, 1.0).sqrt().asin()
}

/// Arithmetic mean of latitudes and longitudes.
///
/// Valid for small spatial extents only; clusters straddling the antimeridian
/// are not supported.
pub fn mean_centroid(points: &[LatLon]) -> Result<LatLon, ModelError> {
    if points.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let n = points.len() as f64;
    let (lat, lon) = points
        .iter()
        .fold((0.0, 0.0), |(la, lo), p| (la + p.lat, lo + p.lon));
    Ok(LatLon::new(lat / n, lon / n))
}

/// One timestamped observation of one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationRecord {
    pub device_id: String,
    /// UTC epoch seconds.
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
    /// Positional accuracy in metres.
    #[serde(rename = "accuracy_m")]
    pub accuracy: f64,
}

impl LocationRecord {
    pub fn new(device_id: impl Into<String>, timestamp: i64, lat: f64, lon: f64, accuracy: f64) -> Self {
        Self {
            device_id: device_id.into(),
            timestamp,
            lat,
            lon,
            accuracy,
        }
    }

    pub fn position(&self) -> LatLon {
        LatLon::new(self.lat, self.lon)
    }

    pub fn set_position(&mut self, p: LatLon) {
        self.lat = p.lat;
        self.lon = p.lon;
    }

    /// Returns the name of the first violated field invariant, if any.
    pub fn invalid_field(&self) -> Option<&'static str> {
        if !(-90.0..=90.0).contains(&self.lat) {
            Some("lat")
        } else if !(-180.0..=180.0).contains(&self.lon) {
            Some("lon")
        } else if !(self.accuracy >= 0.0 && self.accuracy.is_finite()) {
            Some("accuracy_m")
        } else if self.timestamp < 0 {
            Some("timestamp")
        } else {
            None
        }
    }
}

/// Sensor class a stay was inferred from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Source {
    Gps,
    Cellular,
    Merged,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Gps => "GPS",
            Source::Cellular => "CELLULAR",
            Source::Merged => "MERGED",
        }
    }

    /// Source of a stay formed from two stays.
    pub fn combine(self, other: Source) -> Source {
        if self == other {
            self
        } else {
            Source::Merged
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "GPS" => Ok(Source::Gps),
            "CELLULAR" => Ok(Source::Cellular),
            "MERGED" => Ok(Source::Merged),
            other => Err(format!("unknown source `{other}`")),
        }
    }
}

/// An inferred dwell.
#[derive(Debug, Clone, PartialEq)]
pub struct Stay {
    pub device_id: String,
    pub centroid: LatLon,
    pub start: i64,
    pub end: i64,
    pub record_count: usize,
    pub source: Source,
}

impl Stay {
    pub fn duration_seconds(&self) -> i64 {
        self.end - self.start
    }

    /// `(end - start) / 60`, exactly.
    pub fn duration_min(&self) -> f64 {
        self.duration_seconds() as f64 / 60.0
    }
}

/// Stay information attached to a record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StayLabel {
    pub lat: f64,
    pub lon: f64,
    pub duration_min: f64,
}

/// A record plus its stay assignment. `stay == None` is a transient point and
/// serializes as `-1,-1,-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRecord {
    pub record: LocationRecord,
    pub stay: Option<StayLabel>,
}

impl LabeledRecord {
    pub const TRANSIENT: f64 = -1.0;

    pub fn transient(record: LocationRecord) -> Self {
        Self { record, stay: None }
    }

    pub fn is_transient(&self) -> bool {
        self.stay.is_none()
    }

    pub fn stay_lat(&self) -> f64 {
        self.stay.map_or(Self::TRANSIENT, |s| s.lat)
    }

    pub fn stay_lon(&self) -> f64 {
        self.stay.map_or(Self::TRANSIENT, |s| s.lon)
    }

    pub fn stay_duration_min(&self) -> f64 {
        self.stay.map_or(Self::TRANSIENT, |s| s.duration_min)
    }
}

/// Calendar day under a fixed UTC offset, as days since 1970-01-01 local.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LocalDay(pub i64);

impl LocalDay {
    pub fn of(timestamp: i64, utc_offset_s: i64) -> Self {
        LocalDay((timestamp + utc_offset_s).div_euclid(SECONDS_PER_DAY))
    }

    pub fn date(&self) -> Option<chrono::NaiveDate> {
        chrono::NaiveDate::from_ymd_opt(1970, 1, 1)?
            .checked_add_signed(chrono::TimeDelta::try_days(self.0)?)
    }
}

impl fmt::Display for LocalDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.date() {
            Some(d) => write!(f, "{d}"),
            None => write!(f, "day{}", self.0),
        }
    }
}

/// Seconds since local midnight.
pub fn seconds_of_day(timestamp: i64, utc_offset_s: i64) -> i64 {
    (timestamp + utc_offset_s).rem_euclid(SECONDS_PER_DAY)
}

/// One device's records on one local day, sorted by time.
#[derive(Debug, Clone, PartialEq)]
pub struct DayTrajectory {
    pub device_id: String,
    pub local_day: LocalDay,
    pub records: Vec<LocationRecord>,
}

impl DayTrajectory {
    /// Splits time-sorted records into local days.
    pub fn split(records: &[LocationRecord], utc_offset_s: i64) -> Vec<DayTrajectory> {
        let mut days: Vec<DayTrajectory> = Vec::new();
        for r in records {
            let day = LocalDay::of(r.timestamp, utc_offset_s);
            match days.last_mut() {
                Some(d) if d.local_day == day && d.device_id == r.device_id => d.records.push(r.clone()),
                _ => days.push(DayTrajectory {
                    device_id: r.device_id.clone(),
                    local_day: day,
                    records: vec![r.clone()],
                }),
            }
        }
        days
    }
}

/// Index ranges of `records` that fall on the same local day.
pub fn day_ranges(records: &[LocationRecord], utc_offset_s: i64) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=records.len() {
        if i == records.len()
            || LocalDay::of(records[i].timestamp, utc_offset_s)
                != LocalDay::of(records[start].timestamp, utc_offset_s)
        {
            if start < i {
                out.push(start..i);
            }
            start = i;
        }
    }
    out
}

pub fn check_sorted(records: &[LocationRecord]) -> Result<(), ModelError> {
    match records.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
        Some(i) => Err(ModelError::UnsortedInput { index: i + 1 }),
        None => Ok(()),
    }
}

/// Tunable thresholds shared by the stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangePoints {
    pub duration_min: f64,
    pub distance_km: f64,
    pub osc_window_min: f64,
}

impl ChangePoints {
    pub const DURATION_RANGE: (f64, f64) = (0.5, 30.0);
    pub const DISTANCE_RANGE: (f64, f64) = (0.05, 1.0);
    pub const WINDOW_RANGE: (f64, f64) = (1.0 / 6.0, 11.0);

    pub fn new(duration_min: f64, distance_km: f64, osc_window_min: f64) -> Self {
        Self {
            duration_min,
            distance_km,
            osc_window_min,
        }
    }

    pub fn duration_seconds(&self) -> f64 {
        self.duration_min * 60.0
    }

    pub fn validate(&self, allow_out_of_range: bool) -> Result<(), ModelError> {
        check_duration(self.duration_min, allow_out_of_range)?;
        check_distance(self.distance_km, allow_out_of_range)?;
        check_window(self.osc_window_min, allow_out_of_range)
    }
}

impl Default for ChangePoints {
    fn default() -> Self {
        Self::new(5.0, 0.2, 5.0)
    }
}

fn check_range(
    field: &'static str,
    value: f64,
    (min, max): (f64, f64),
    allow_out_of_range: bool,
) -> Result<(), ModelError> {
    if !(value.is_finite() && value > 0.0) {
        return Err(ModelError::NotPositive { field, value });
    }
    // small slack so 1/6 written as 0.1666667 is accepted
    let eps = 1e-6;
    if !allow_out_of_range && (value < min - eps || value > max + eps) {
        return Err(ModelError::OutOfRange {
            field,
            value,
            min,
            max,
        });
    }
    Ok(())
}

pub fn check_duration(value: f64, allow: bool) -> Result<(), ModelError> {
    check_range("duration_min", value, ChangePoints::DURATION_RANGE, allow)
}

pub fn check_distance(value: f64, allow: bool) -> Result<(), ModelError> {
    check_range("distance_km", value, ChangePoints::DISTANCE_RANGE, allow)
}

pub fn check_window(value: f64, allow: bool) -> Result<(), ModelError> {
    check_range("osc_window_min", value, ChangePoints::WINDOW_RANGE, allow)
}
