//! Trace segmentation clustering.
//!
//! Greedy leftmost-maximal scan over one day's records: the anchor is the first
//! unassigned record, the run is extended while every pairwise distance stays
//! within the distance threshold, and the run becomes a stay when it lasts at
//! least the duration threshold. Otherwise the anchor alone is marked transient
//! and the scan restarts one record later.

use std::ops::Range;

use crate::model::{
    check_sorted, day_ranges, haversine_km, mean_centroid, ChangePoints, DayTrajectory,
    LabeledRecord, LocationRecord, ModelError, Source,
};

use super::StayTrace;

fn check_thresholds(cp: &ChangePoints) -> Result<(), ModelError> {
    for (field, value) in [("duration_min", cp.duration_min), ("distance_km", cp.distance_km)] {
        if !(value.is_finite() && value > 0.0) {
            return Err(ModelError::NotPositive { field, value });
        }
    }
    Ok(())
}

/// Index ranges of `records` that form stays. Records must be time-sorted.
pub fn segment_records(
    records: &[LocationRecord],
    cp: &ChangePoints,
) -> Result<Vec<Range<usize>>, ModelError> {
    check_thresholds(cp)?;
    check_sorted(records)?;
    let n = records.len();
    let pos: Vec<_> = records.iter().map(LocationRecord::position).collect();
    let min_span = cp.duration_seconds();
    // By the triangle inequality a candidate within `d - reach` of the anchor
    // is within `d` of every member; the margin keeps rounding from admitting
    // a pair the exhaustive check would reject.
    let safe = cp.distance_km * (1.0 - 1e-9);
    let mut stays = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        // farthest member from the anchor
        let mut reach = 0.0f64;
        while j + 1 < n {
            let to_anchor = haversine_km(pos[i], pos[j + 1]);
            let fits = to_anchor + reach <= safe
                || (i..=j).all(|k| haversine_km(pos[k], pos[j + 1]) <= cp.distance_km);
            if !fits {
                break;
            }
            reach = reach.max(to_anchor);
            j += 1;
        }
        if (records[j].timestamp - records[i].timestamp) as f64 >= min_span {
            stays.push(i..j + 1);
            i = j + 1;
        } else {
            i += 1;
        }
    }
    Ok(stays)
}

/// Labels one day's records with the stays found on it.
pub fn trace_segmentation(
    day: &DayTrajectory,
    cp: &ChangePoints,
) -> Result<Vec<LabeledRecord>, ModelError> {
    let trace = segment_trace(&day.device_id, day.records.clone(), cp, 0, Source::Gps)?;
    Ok(trace.labeled())
}

/// Runs segmentation independently on each local day of a user's records.
pub fn segment_trace(
    device_id: &str,
    records: Vec<LocationRecord>,
    cp: &ChangePoints,
    utc_offset_s: i64,
    source: Source,
) -> Result<StayTrace, ModelError> {
    check_sorted(&records)?;
    let mut runs = Vec::new();
    for day in day_ranges(&records, utc_offset_s) {
        for r in segment_records(&records[day.clone()], cp)? {
            let range = day.start + r.start..day.start + r.end;
            let pts: Vec<_> = records[range.clone()].iter().map(LocationRecord::position).collect();
            runs.push((range, mean_centroid(&pts)?));
        }
    }
    Ok(StayTrace::from_runs(device_id, records, &runs, source))
}
