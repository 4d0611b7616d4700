//! Stay integrator: folds higher-uncertainty (cellular) stays into
//! lower-uncertainty (GPS) stays, then runs the fixed four-stage tail.
//!
//! Pair rules, with cellular stays taken in start order against the current
//! GPS set:
//!
//! | temporal relation        | contiguous (≤ 0.2 km)     | not contiguous              |
//! |--------------------------|---------------------------|-----------------------------|
//! | cellular inside GPS      | merge into the GPS stay   | drop the cellular stay      |
//! | partial overlap / covers | extend GPS to the union   | keep the non-overlapping part |
//! | separate                 | keep both                 | keep both                   |
//!
//! Each cell is switchable through [`IntegrationRules`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{haversine_km, ChangePoints, LocationRecord, Stay};
use crate::oscillation::correct_trace_stays;
use crate::stay::{cluster_trace_stays, stay_duration_filter, StayTrace};

/// Centroid distance at or below which two stays are spatially contiguous.
pub const CONTIGUITY_KM: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrateError {
    #[error("device mismatch: GPS stays belong to `{gps}`, cellular stays to `{cellular}`")]
    DeviceMismatch { gps: String, cellular: String },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Which side of a pair contains the other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalRelation {
    Separate,
    Contained { container: Side },
    Intersecting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialRelation {
    Contiguous,
    NotContiguous,
}

/// Interval relation on closed `[start, end]` intervals. Equal intervals count
/// as the first containing the second.
pub fn classify_temporal(a: &Stay, b: &Stay) -> TemporalRelation {
    if a.end < b.start || b.end < a.start {
        TemporalRelation::Separate
    } else if a.start <= b.start && b.end <= a.end {
        TemporalRelation::Contained { container: Side::First }
    } else if b.start <= a.start && a.end <= b.end {
        TemporalRelation::Contained { container: Side::Second }
    } else {
        TemporalRelation::Intersecting
    }
}

pub fn classify_spatial(a: &Stay, b: &Stay) -> SpatialRelation {
    if haversine_km(a.centroid, b.centroid) <= CONTIGUITY_KM {
        SpatialRelation::Contiguous
    } else {
        SpatialRelation::NotContiguous
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationAction {
    /// Fold the cellular stay into the GPS stay, keeping the GPS location.
    Merge,
    /// Discard the cellular stay.
    Drop,
    /// Keep only the parts of the cellular stay not covered by GPS stays.
    Split,
    /// Keep the cellular stay unchanged, even if it overlaps.
    Keep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationRules {
    pub contained_contiguous: IntegrationAction,
    pub contained_apart: IntegrationAction,
    pub intersecting_contiguous: IntegrationAction,
    pub intersecting_apart: IntegrationAction,
}

impl Default for IntegrationRules {
    fn default() -> Self {
        Self {
            contained_contiguous: IntegrationAction::Merge,
            contained_apart: IntegrationAction::Drop,
            intersecting_contiguous: IntegrationAction::Merge,
            intersecting_apart: IntegrationAction::Split,
        }
    }
}

struct WorkStay {
    stay: Stay,
    members: Vec<usize>,
}

fn collect(trace: &StayTrace, index: &[usize]) -> Vec<WorkStay> {
    let members = trace.members();
    trace
        .stays
        .iter()
        .zip(members)
        .map(|(s, m)| WorkStay {
            stay: s.clone(),
            members: m.into_iter().map(|i| index[i]).collect(),
        })
        .collect()
}

/// Pairwise fusion only, without the tail stages.
pub fn fuse_stays(
    gps: &StayTrace,
    cellular: &StayTrace,
    duration_min: f64,
    rules: &IntegrationRules,
) -> Result<StayTrace, IntegrateError> {
    if !gps.is_empty() && !cellular.is_empty() && gps.device_id != cellular.device_id {
        return Err(IntegrateError::DeviceMismatch {
            gps: gps.device_id.clone(),
            cellular: cellular.device_id.clone(),
        });
    }
    let device_id = if gps.is_empty() { &cellular.device_id } else { &gps.device_id };

    // merge both record streams by time; GPS first on ties
    let mut order: Vec<(i64, bool, usize)> = gps
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.timestamp, false, i))
        .chain(cellular.records.iter().enumerate().map(|(i, r)| (r.timestamp, true, i)))
        .collect();
    order.sort_by_key(|&(t, cell, i)| (t, cell, i));
    let mut gps_index = vec![0; gps.records.len()];
    let mut cell_index = vec![0; cellular.records.len()];
    let mut records: Vec<LocationRecord> = Vec::with_capacity(order.len());
    for (pos, &(_, cell, i)) in order.iter().enumerate() {
        if cell {
            cell_index[i] = pos;
            records.push(cellular.records[i].clone());
        } else {
            gps_index[i] = pos;
            records.push(gps.records[i].clone());
        }
    }

    let mut fixed = collect(gps, &gps_index);
    let mut extra: Vec<WorkStay> = Vec::new();
    let min_span = duration_min * 60.0;

    for c in collect(cellular, &cell_index) {
        let overlapping: Vec<usize> = (0..fixed.len())
            .filter(|&g| classify_temporal(&fixed[g].stay, &c.stay) != TemporalRelation::Separate)
            .collect();
        if overlapping.is_empty() {
            extra.push(c);
            continue;
        }
        let container = overlapping.iter().copied().find(|&g| {
            classify_temporal(&fixed[g].stay, &c.stay) == TemporalRelation::Contained { container: Side::First }
        });
        let (target, action) = match container {
            Some(g) => match classify_spatial(&fixed[g].stay, &c.stay) {
                SpatialRelation::Contiguous => (g, rules.contained_contiguous),
                SpatialRelation::NotContiguous => (g, rules.contained_apart),
            },
            None => {
                let near = overlapping
                    .iter()
                    .copied()
                    .find(|&g| classify_spatial(&fixed[g].stay, &c.stay) == SpatialRelation::Contiguous);
                match near {
                    Some(g) => (g, rules.intersecting_contiguous),
                    None => (overlapping[0], rules.intersecting_apart),
                }
            }
        };
        match action {
            IntegrationAction::Keep => extra.push(c),
            IntegrationAction::Drop => {}
            IntegrationAction::Merge => {
                // grow toward the cellular interval without crossing neighbours
                let lo = if target > 0 { fixed[target - 1].stay.end } else { i64::MIN };
                let hi = fixed.get(target + 1).map_or(i64::MAX, |n| n.stay.start);
                let g = &mut fixed[target];
                g.stay.start = g.stay.start.min(c.stay.start).max(lo);
                g.stay.end = g.stay.end.max(c.stay.end).min(hi);
                let (s, e) = (g.stay.start, g.stay.end);
                g.members.extend(c.members.iter().copied().filter(|&m| {
                    let t = records[m].timestamp;
                    s <= t && t <= e
                }));
                g.members.sort_unstable();
                g.stay.record_count = g.members.len();
                g.stay.source = g.stay.source.combine(c.stay.source);
            }
            IntegrationAction::Split => {
                let mut covered: Vec<(i64, i64)> =
                    overlapping.iter().map(|&g| (fixed[g].stay.start, fixed[g].stay.end)).collect();
                covered.sort_unstable();
                let mut pieces = Vec::new();
                let mut cursor = c.stay.start;
                for (s, e) in covered {
                    if s > cursor {
                        pieces.push((cursor, s));
                    }
                    cursor = cursor.max(e);
                }
                if cursor < c.stay.end {
                    pieces.push((cursor, c.stay.end));
                }
                for (s, e) in pieces {
                    let members: Vec<usize> = c
                        .members
                        .iter()
                        .copied()
                        .filter(|&m| {
                            let t = records[m].timestamp;
                            s <= t && t <= e
                        })
                        .collect();
                    if (e - s) as f64 >= min_span && !members.is_empty() {
                        extra.push(WorkStay {
                            stay: Stay {
                                start: s,
                                end: e,
                                record_count: members.len(),
                                ..c.stay.clone()
                            },
                            members,
                        });
                    }
                }
            }
        }
    }

    let mut out = StayTrace::raw(device_id.clone(), records);
    for w in fixed.into_iter().chain(extra) {
        let idx = out.stays.len();
        for m in &w.members {
            out.membership[*m] = Some(idx);
        }
        out.stays.push(w.stay);
    }
    out.sort_stays();
    Ok(out)
}

/// Tail stages run after fusion: oscillation corrector (relabel only), stay
/// duration calculator, stay-mode incremental clustering at 0.2 km, and the
/// stay duration calculator again.
pub fn integration_tail(trace: &StayTrace, cp: &ChangePoints) -> Result<StayTrace, IntegrateError> {
    let t = correct_trace_stays(trace, cp.osc_window_min, false)?;
    let t = stay_duration_filter(&t, cp.duration_min);
    let tail_cp = ChangePoints {
        distance_km: CONTIGUITY_KM,
        ..*cp
    };
    let t = cluster_trace_stays(&t, &tail_cp);
    Ok(stay_duration_filter(&t, cp.duration_min))
}

/// Fuses cellular stays into GPS stays and runs the tail.
pub fn integrate_stays(
    gps: &StayTrace,
    cellular: &StayTrace,
    cp: &ChangePoints,
    rules: &IntegrationRules,
) -> Result<StayTrace, IntegrateError> {
    let fused = fuse_stays(gps, cellular, cp.duration_min, rules)?;
    integration_tail(&fused, cp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LatLon, Source};

    const MIN: i64 = 60;

    fn stay(start_min: i64, end_min: i64, lon: f64, source: Source) -> Stay {
        Stay {
            device_id: "u".into(),
            centroid: LatLon::new(0.0, lon),
            start: start_min * MIN,
            end: end_min * MIN,
            record_count: 2,
            source,
        }
    }

    /// A trace whose stays each have one record at start and one at end.
    fn trace(stays: &[Stay]) -> StayTrace {
        let mut recs = Vec::new();
        let mut membership = Vec::new();
        for (i, s) in stays.iter().enumerate() {
            let acc = if s.source == Source::Gps { 10.0 } else { 500.0 };
            for t in [s.start, s.end] {
                recs.push(LocationRecord::new("u", t, s.centroid.lat, s.centroid.lon, acc));
                membership.push(Some(i));
            }
        }
        StayTrace {
            device_id: "u".into(),
            records: recs,
            membership,
            stays: stays.to_vec(),
        }
    }

    // 0.00045 deg of longitude at the equator is ~0.05 km
    const NEAR: f64 = 0.00045;
    const FAR: f64 = 0.0045;

    #[test]
    fn temporal_relations() {
        let a = stay(0, 10, 0.0, Source::Gps);
        assert_eq!(classify_temporal(&a, &stay(20, 30, 0.0, Source::Cellular)), TemporalRelation::Separate);
        assert_eq!(
            classify_temporal(&a, &stay(2, 8, 0.0, Source::Cellular)),
            TemporalRelation::Contained { container: Side::First }
        );
        assert_eq!(
            classify_temporal(&stay(2, 8, 0.0, Source::Cellular), &a),
            TemporalRelation::Contained { container: Side::Second }
        );
        assert_eq!(classify_temporal(&a, &stay(5, 15, 0.0, Source::Cellular)), TemporalRelation::Intersecting);
        // touching endpoints share an instant
        assert_eq!(classify_temporal(&a, &stay(10, 15, 0.0, Source::Cellular)), TemporalRelation::Intersecting);
    }

    #[test]
    fn spatial_relations() {
        let a = stay(0, 10, 0.0, Source::Gps);
        let d01 = 0.1 / haversine_km(LatLon::new(0.0, 0.0), LatLon::new(0.0, 1.0));
        let d03 = 0.3 / haversine_km(LatLon::new(0.0, 0.0), LatLon::new(0.0, 1.0));
        assert_eq!(classify_spatial(&a, &stay(0, 1, d01, Source::Cellular)), SpatialRelation::Contiguous);
        assert_eq!(classify_spatial(&a, &stay(0, 1, d03, Source::Cellular)), SpatialRelation::NotContiguous);
        assert_eq!(classify_spatial(&a, &a.clone()), SpatialRelation::Contiguous);
    }

    #[test]
    fn contained_contiguous_merges() {
        let gps = trace(&[stay(0, 10, 0.0, Source::Gps)]);
        let cell = trace(&[stay(5, 8, NEAR, Source::Cellular)]);
        let out = fuse_stays(&gps, &cell, 5.0, &IntegrationRules::default()).unwrap();
        out.check().unwrap();
        assert_eq!(out.stays.len(), 1);
        let s = &out.stays[0];
        assert_eq!((s.start, s.end), (0, 600));
        assert_eq!(s.centroid, LatLon::new(0.0, 0.0));
        assert_eq!(s.record_count, 4);
        assert_eq!(s.source, Source::Merged);
    }

    #[test]
    fn contained_apart_drops() {
        let gps = trace(&[stay(0, 10, 0.0, Source::Gps)]);
        let cell = trace(&[stay(5, 8, FAR, Source::Cellular)]);
        let out = fuse_stays(&gps, &cell, 5.0, &IntegrationRules::default()).unwrap();
        assert_eq!(out.stays.len(), 1);
        assert_eq!(out.stays[0].record_count, 2);
        assert_eq!(out.records.len(), 4);
    }

    #[test]
    fn separate_kept() {
        let gps = trace(&[stay(0, 10, 0.0, Source::Gps)]);
        let c = stay(20, 30, FAR, Source::Cellular);
        let out = fuse_stays(&gps, &trace(std::slice::from_ref(&c)), 5.0, &IntegrationRules::default()).unwrap();
        assert_eq!(out.stays.len(), 2);
        assert_eq!(out.stays[1], c);
    }

    #[test]
    fn intersecting_contiguous_extends_gps() {
        let gps = trace(&[stay(0, 10, 0.0, Source::Gps)]);
        let cell = trace(&[stay(5, 15, NEAR, Source::Cellular)]);
        let out = fuse_stays(&gps, &cell, 5.0, &IntegrationRules::default()).unwrap();
        assert_eq!(out.stays.len(), 1);
        assert_eq!((out.stays[0].start, out.stays[0].end), (0, 900));
        assert_eq!(out.stays[0].centroid, LatLon::new(0.0, 0.0));
    }

    #[test]
    fn intersecting_apart_truncates() {
        let gps = trace(&[stay(0, 10, 0.0, Source::Gps)]);
        let cell = trace(&[stay(5, 15, FAR, Source::Cellular)]);
        let out = fuse_stays(&gps, &cell, 5.0, &IntegrationRules::default()).unwrap();
        assert_eq!(out.stays.len(), 2);
        assert_eq!((out.stays[1].start, out.stays[1].end), (600, 900));
        assert_eq!(out.stays[1].duration_min(), 5.0);
        let strict = fuse_stays(&gps, &cell, 5.5, &IntegrationRules::default()).unwrap();
        assert_eq!(strict.stays.len(), 1);
    }

    #[test]
    fn rules_are_switchable() {
        let gps = trace(&[stay(0, 10, 0.0, Source::Gps)]);
        let cell = trace(&[stay(5, 8, NEAR, Source::Cellular)]);
        let rules = IntegrationRules {
            contained_contiguous: IntegrationAction::Drop,
            ..Default::default()
        };
        let out = fuse_stays(&gps, &cell, 5.0, &rules).unwrap();
        assert_eq!(out.stays[0].record_count, 2);
        assert_eq!(out.stays[0].source, Source::Gps);
    }

    #[test]
    fn device_mismatch() {
        let gps = trace(&[stay(0, 10, 0.0, Source::Gps)]);
        let mut cell = trace(&[stay(20, 30, 0.0, Source::Cellular)]);
        cell.device_id = "other".into();
        assert!(matches!(
            integrate_stays(&gps, &cell, &ChangePoints::default(), &IntegrationRules::default()),
            Err(IntegrateError::DeviceMismatch { .. })
        ));
    }

    #[test]
    fn empty_cellular_equals_tail_of_gps() {
        let gps = trace(&[stay(0, 10, 0.0, Source::Gps), stay(30, 45, FAR, Source::Gps)]);
        let empty = StayTrace::raw("u", Vec::new());
        let cp = ChangePoints::default();
        let a = integrate_stays(&gps, &empty, &cp, &IntegrationRules::default()).unwrap();
        let b = integration_tail(&gps, &cp).unwrap();
        assert_eq!(a, b);
    }
}
