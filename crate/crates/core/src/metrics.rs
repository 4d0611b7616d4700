//! Mobility metrics computed from stays: trips per person-day, daily radius of
//! gyration and the half-hour departure-time histogram.
//!
//! A trip is the move between two consecutive stays of one user that start on
//! the same local day; its departure time is the end of the origin stay.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{haversine_km, mean_centroid, seconds_of_day, LocalDay, Stay};

pub const HISTOGRAM_BINS: usize = 48;
const BIN_SECONDS: i64 = 30 * 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("radius of gyration is undefined for zero stays")]
    Undefined,
    #[error("no user in the cohort has a stay")]
    EmptyCohort,
}

/// Trips on `day`, or `None` when the user has no stay starting that day
/// (such days are left out of every average).
pub fn trips_per_day(stays: &[Stay], day: LocalDay, utc_offset_s: i64) -> Option<usize> {
    let n = stays
        .iter()
        .filter(|s| LocalDay::of(s.start, utc_offset_s) == day)
        .count();
    (n > 0).then(|| n - 1)
}

/// Root-mean-square haversine distance of the stays from their mean centroid.
pub fn radius_of_gyration(stays: &[Stay]) -> Result<f64, MetricsError> {
    let pts: Vec<_> = stays.iter().map(|s| s.centroid).collect();
    let center = mean_centroid(&pts).map_err(|_| MetricsError::Undefined)?;
    let sum: f64 = pts.iter().map(|p| haversine_km(*p, center).powi(2)).sum();
    Ok((sum / pts.len() as f64).sqrt())
}

/// Groups time-sorted stays by the local day they start on.
pub fn stays_by_day(stays: &[Stay], utc_offset_s: i64) -> BTreeMap<LocalDay, Vec<Stay>> {
    let mut out: BTreeMap<LocalDay, Vec<Stay>> = BTreeMap::new();
    for s in stays {
        out.entry(LocalDay::of(s.start, utc_offset_s)).or_default().push(s.clone());
    }
    out
}

/// Mean of the daily radius over days with at least one stay.
pub fn user_radius_of_gyration(stays: &[Stay], utc_offset_s: i64) -> Result<f64, MetricsError> {
    let days = stays_by_day(stays, utc_offset_s);
    if days.is_empty() {
        return Err(MetricsError::Undefined);
    }
    let total: f64 = days.values().map(|d| radius_of_gyration(d)).sum::<Result<f64, _>>()?;
    Ok(total / days.len() as f64)
}

pub fn departure_bin(timestamp: i64, utc_offset_s: i64) -> usize {
    (seconds_of_day(timestamp, utc_offset_s) / BIN_SECONDS) as usize
}

/// Departure counts of one user's trips in 48 half-hour bins of local time.
pub fn departure_histogram(stays: &[Stay], utc_offset_s: i64) -> [u64; HISTOGRAM_BINS] {
    let mut bins = [0u64; HISTOGRAM_BINS];
    for pair in stays.windows(2) {
        let (origin, dest) = (&pair[0], &pair[1]);
        if LocalDay::of(origin.start, utc_offset_s) == LocalDay::of(dest.start, utc_offset_s) {
            bins[departure_bin(origin.end, utc_offset_s)] += 1;
        }
    }
    bins
}

/// Which users enter an aggregate.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Cohort {
    #[default]
    All,
    Users(BTreeSet<String>),
}

impl Cohort {
    pub fn contains(&self, device_id: &str) -> bool {
        match self {
            Cohort::All => true,
            Cohort::Users(u) => u.contains(device_id),
        }
    }

    /// Users with at least one stay in every one of `runs`.
    pub fn with_stays_in_all<'a>(runs: impl IntoIterator<Item = &'a BTreeMap<String, Vec<Stay>>>) -> Self {
        let mut acc: Option<BTreeSet<String>> = None;
        for run in runs {
            let users: BTreeSet<String> = run
                .iter()
                .filter(|(_, s)| !s.is_empty())
                .map(|(u, _)| u.clone())
                .collect();
            acc = Some(match acc {
                None => users,
                Some(prev) => prev.intersection(&users).cloned().collect(),
            });
        }
        Cohort::Users(acc.unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityMetrics {
    pub trips_per_person_day: f64,
    pub rg_km_per_person_day: f64,
    pub departure_histogram: Vec<u64>,
    pub users_included: usize,
    pub person_days: usize,
    pub total_trips: u64,
}

/// Averages over every person-day with at least one stay among cohort users.
pub fn aggregate_metrics(
    per_user: &BTreeMap<String, Vec<Stay>>,
    cohort: &Cohort,
    utc_offset_s: i64,
) -> Result<MobilityMetrics, MetricsError> {
    let mut hist = [0u64; HISTOGRAM_BINS];
    let mut person_days = 0usize;
    let mut trips = 0u64;
    let mut rg_sum = 0.0;
    let mut users = 0usize;
    for (user, stays) in per_user {
        if !cohort.contains(user) || stays.is_empty() {
            continue;
        }
        users += 1;
        for day_stays in stays_by_day(stays, utc_offset_s).values() {
            person_days += 1;
            trips += (day_stays.len() - 1) as u64;
            rg_sum += radius_of_gyration(day_stays)?;
        }
        for (h, c) in hist.iter_mut().zip(departure_histogram(stays, utc_offset_s)) {
            *h += c;
        }
    }
    if person_days == 0 {
        return Err(MetricsError::EmptyCohort);
    }
    Ok(MobilityMetrics {
        trips_per_person_day: trips as f64 / person_days as f64,
        rg_km_per_person_day: rg_sum / person_days as f64,
        departure_histogram: hist.to_vec(),
        users_included: users,
        person_days,
        total_trips: trips,
    })
}
