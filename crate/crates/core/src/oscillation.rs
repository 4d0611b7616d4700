//! Oscillation corrector.
//!
//! A window is a maximal run of items whose start times lie within the time
//! window of the run's first item. Windows of at least three items that contain
//! a circular event (X, then something else, then X again) are flagged, and
//! every item in a flagged window is moved to the candidate location with the
//! largest total dwell across the whole input. Correction repeats until no
//! window is flagged, so applying it twice is the same as applying it once.

use std::collections::HashMap;
use std::ops::Range;

use crate::model::{LatLon, LocalDay, ModelError, EARTH_RADIUS_KM};
use crate::stay::StayTrace;

/// Snap radius used to decide that two raw records share a location.
pub const RECORD_SNAP_M: f64 = 10.0;

/// Something with a location and a time extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscItem {
    pub location: LatLon,
    pub start: i64,
    pub end: i64,
}

impl OscItem {
    pub fn point(location: LatLon, t: i64) -> Self {
        Self {
            location,
            start: t,
            end: t,
        }
    }
}

/// How location identity and dwell time are derived from items.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ItemKind {
    /// Stays: exact coordinate equality; dwell is the sum of durations.
    Stays,
    /// Raw records: equality on a `snap_m` grid; dwell is the gap to the next
    /// record when that record is at the same location on the same local day.
    Records { snap_m: f64, utc_offset_s: i64 },
}

impl ItemKind {
    pub fn records(utc_offset_s: i64) -> Self {
        ItemKind::Records {
            snap_m: RECORD_SNAP_M,
            utc_offset_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscConfig {
    pub window_min: f64,
    pub kind: ItemKind,
}

impl OscConfig {
    pub fn new(window_min: f64, kind: ItemKind) -> Self {
        Self { window_min, kind }
    }

    fn window_s(&self) -> f64 {
        self.window_min * 60.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OscillationWindow {
    pub items: Range<usize>,
    pub circular_event_present: bool,
    /// Total dwell, in seconds over the whole input, of each location in the
    /// window, keyed by the location's first observed coordinates.
    pub dwell_by_location: Vec<(LatLon, i64)>,
}

/// Items reduced to location ids.
struct Keyed {
    keys: Vec<usize>,
    /// First observed coordinates of each id.
    reps: Vec<LatLon>,
    dwell: Vec<i64>,
}

fn grid_key(p: LatLon, snap_m: f64) -> (i64, i64) {
    let cell_deg = snap_m / 1000.0 / (EARTH_RADIUS_KM * std::f64::consts::PI / 180.0);
    let row = (p.lat / cell_deg).floor();
    let row_lat = ((row + 0.5) * cell_deg).to_radians();
    let col = (p.lon * row_lat.cos().max(1e-6) / cell_deg).floor();
    (row as i64, col as i64)
}

fn key_items(items: &[OscItem], kind: ItemKind) -> Keyed {
    let mut ids: HashMap<(i64, i64), usize> = HashMap::new();
    let mut keys = Vec::with_capacity(items.len());
    let mut reps = Vec::new();
    for it in items {
        let raw = match kind {
            ItemKind::Stays => (it.location.lat.to_bits() as i64, it.location.lon.to_bits() as i64),
            ItemKind::Records { snap_m, .. } => grid_key(it.location, snap_m),
        };
        let next = reps.len();
        let id = *ids.entry(raw).or_insert(next);
        if id == next {
            reps.push(it.location);
        }
        keys.push(id);
    }
    let mut dwell = vec![0i64; reps.len()];
    match kind {
        ItemKind::Stays => {
            for (it, &k) in items.iter().zip(&keys) {
                dwell[k] += it.end - it.start;
            }
        }
        ItemKind::Records { utc_offset_s, .. } => {
            for i in 0..items.len().saturating_sub(1) {
                let (a, b) = (&items[i], &items[i + 1]);
                if keys[i] == keys[i + 1]
                    && LocalDay::of(a.start, utc_offset_s) == LocalDay::of(b.start, utc_offset_s)
                {
                    dwell[keys[i]] += b.start - a.start;
                }
            }
        }
    }
    Keyed { keys, reps, dwell }
}

fn check_sorted(items: &[OscItem]) -> Result<(), ModelError> {
    match items.windows(2).position(|w| w[1].start < w[0].start) {
        Some(i) => Err(ModelError::UnsortedInput { index: i + 1 }),
        None => Ok(()),
    }
}

/// True when some location recurs with a different location in between.
fn has_circular_event(keys: &[usize]) -> bool {
    let mut last: HashMap<usize, usize> = HashMap::new();
    for (c, &k) in keys.iter().enumerate() {
        if let Some(&a) = last.get(&k) {
            if a + 1 < c {
                return true;
            }
        }
        last.insert(k, c);
    }
    false
}

/// One non-overlapping scan for flagged windows.
fn scan(keys: &[usize], items: &[OscItem], window_s: f64) -> Vec<Range<usize>> {
    let n = items.len();
    let mut out = Vec::new();
    let mut i = 0;
    let mut j = 0;
    while i < n {
        j = j.max(i);
        while j + 1 < n && (items[j + 1].start - items[i].start) as f64 <= window_s {
            j += 1;
        }
        if j + 1 - i >= 3 && has_circular_event(&keys[i..=j]) {
            out.push(i..j + 1);
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Flagged windows of a single scan over time-sorted items.
pub fn detect_oscillation_windows(
    items: &[OscItem],
    cfg: &OscConfig,
) -> Result<Vec<OscillationWindow>, ModelError> {
    check_sorted(items)?;
    let keyed = key_items(items, cfg.kind);
    Ok(scan(&keyed.keys, items, cfg.window_s())
        .into_iter()
        .map(|range| {
            let mut seen = Vec::new();
            for &k in &keyed.keys[range.clone()] {
                if !seen.contains(&k) {
                    seen.push(k);
                }
            }
            OscillationWindow {
                items: range,
                circular_event_present: true,
                dwell_by_location: seen.iter().map(|&k| (keyed.reps[k], keyed.dwell[k])).collect(),
            }
        })
        .collect())
}

/// Result of a correction: the rewritten items and which of them moved.
#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub items: Vec<OscItem>,
    pub rewritten: Vec<bool>,
}

/// Rewrites oscillating items to the true location of their window.
pub fn correct_oscillations(items: &[OscItem], cfg: &OscConfig) -> Result<Vec<OscItem>, ModelError> {
    Ok(correct_oscillations_detailed(items, cfg)?.items)
}

pub fn correct_oscillations_detailed(items: &[OscItem], cfg: &OscConfig) -> Result<Correction, ModelError> {
    check_sorted(items)?;
    let Keyed { mut keys, reps, dwell } = key_items(items, cfg.kind);
    // rank 0 is the most plausible location: longest dwell, then first observed
    let mut order: Vec<usize> = (0..reps.len()).collect();
    order.sort_by(|&a, &b| dwell[b].cmp(&dwell[a]).then(a.cmp(&b)));
    let mut rank = vec![0; reps.len()];
    for (r, &id) in order.iter().enumerate() {
        rank[id] = r;
    }
    let mut rewritten = vec![false; items.len()];
    // every flagged window strictly improves the rank of at least one item,
    // so this terminates
    loop {
        let windows = scan(&keys, items, cfg.window_s());
        if windows.is_empty() {
            break;
        }
        for w in windows {
            let best = keys[w.clone()].iter().copied().min_by_key(|&k| rank[k]).expect("non-empty window");
            for i in w {
                if keys[i] != best {
                    keys[i] = best;
                    rewritten[i] = true;
                }
            }
        }
    }
    let items = items
        .iter()
        .zip(&keys)
        .zip(&rewritten)
        .map(|((it, &k), &moved)| OscItem {
            location: if moved { reps[k] } else { it.location },
            ..*it
        })
        .collect();
    Ok(Correction { items, rewritten })
}

/// Pre-processing position: corrects the raw record coordinates of a trace.
pub fn correct_trace_records(
    trace: &StayTrace,
    window_min: f64,
    utc_offset_s: i64,
) -> Result<StayTrace, ModelError> {
    let items: Vec<_> = trace
        .records
        .iter()
        .map(|r| OscItem::point(r.position(), r.timestamp))
        .collect();
    let fixed = correct_oscillations_detailed(&items, &OscConfig::new(window_min, ItemKind::records(utc_offset_s)))?;
    let mut out = trace.clone();
    for ((r, it), moved) in out.records.iter_mut().zip(&fixed.items).zip(&fixed.rewritten) {
        if *moved {
            r.set_position(it.location);
        }
    }
    Ok(out)
}

/// Post-processing position: corrects stay locations.
///
/// With `merge`, consecutive stays that end up at the same location, start
/// within one window of each other, and include at least one rewritten stay
/// are fused into one stay spanning both.
pub fn correct_trace_stays(trace: &StayTrace, window_min: f64, merge: bool) -> Result<StayTrace, ModelError> {
    let items: Vec<_> = trace
        .stays
        .iter()
        .map(|s| OscItem {
            location: s.centroid,
            start: s.start,
            end: s.end,
        })
        .collect();
    let fixed = correct_oscillations_detailed(&items, &OscConfig::new(window_min, ItemKind::Stays))?;
    let mut out = trace.clone();
    for (s, it) in out.stays.iter_mut().zip(&fixed.items) {
        s.centroid = it.location;
    }
    if !merge || out.stays.len() < 2 {
        return Ok(out);
    }
    let window_s = window_min * 60.0;
    // group[i] = index of the surviving stay stay i folds into
    let mut group: Vec<usize> = (0..out.stays.len()).collect();
    for k in 1..out.stays.len() {
        let (a, b) = (&out.stays[k - 1], &out.stays[k]);
        if a.centroid == b.centroid
            && (fixed.rewritten[k - 1] || fixed.rewritten[k])
            && ((b.start - a.start) as f64) <= window_s
        {
            group[k] = group[k - 1];
        }
    }
    if group.iter().enumerate().all(|(i, &g)| i == g) {
        return Ok(out);
    }
    let mut merged: Vec<crate::model::Stay> = Vec::new();
    let mut remap = vec![0; out.stays.len()];
    for (k, stay) in out.stays.iter().enumerate() {
        if group[k] == k {
            remap[k] = merged.len();
            merged.push(stay.clone());
        } else {
            let target = remap[group[k]];
            remap[k] = target;
            let m = &mut merged[target];
            m.start = m.start.min(stay.start);
            m.end = m.end.max(stay.end);
            m.record_count += stay.record_count;
            m.source = m.source.combine(stay.source);
        }
    }
    out.stays = merged;
    for m in out.membership.iter_mut() {
        *m = m.map(|s| remap[s]);
    }
    out.sort_stays();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LocationRecord, Source, Stay};

    const A: LatLon = LatLon::new(0.0, 0.0);
    const B: LatLon = LatLon::new(0.0, 0.02);
    const C: LatLon = LatLon::new(0.02, 0.0);

    fn item(loc: LatLon, start: i64, end: i64) -> OscItem {
        OscItem { location: loc, start, end }
    }

    fn stays_cfg(window_min: f64) -> OscConfig {
        OscConfig::new(window_min, ItemKind::Stays)
    }

    #[test]
    fn circular_window_flagged() {
        let items = [item(A, 0, 300), item(B, 310, 330), item(A, 340, 640)];
        let w = detect_oscillation_windows(&items, &stays_cfg(11.0)).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].items, 0..3);
        assert!(w[0].circular_event_present);
        assert_eq!(w[0].dwell_by_location, vec![(A, 600), (B, 20)]);
    }

    #[test]
    fn distinct_locations_never_flagged() {
        let items = [item(A, 0, 10), item(B, 20, 30), item(C, 40, 50)];
        assert!(detect_oscillation_windows(&items, &stays_cfg(11.0)).unwrap().is_empty());
    }

    #[test]
    fn window_shorter_than_gaps() {
        let items = [item(A, 0, 0), item(B, 60, 60), item(A, 120, 120)];
        assert!(detect_oscillation_windows(&items, &stays_cfg(10.0 / 60.0)).unwrap().is_empty());
    }

    #[test]
    fn unsorted_rejected() {
        let items = [item(A, 10, 10), item(B, 0, 0)];
        assert_eq!(
            detect_oscillation_windows(&items, &stays_cfg(5.0)),
            Err(ModelError::UnsortedInput { index: 1 })
        );
    }

    #[test]
    fn short_excursion_rewritten() {
        let items = [item(A, 0, 300), item(B, 310, 330), item(A, 340, 640)];
        let out = correct_oscillations(&items, &stays_cfg(11.0)).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|i| i.location == A));
        assert_eq!(out[1].start, 310);
    }

    #[test]
    fn tie_goes_to_first_observed() {
        let a_first = [item(A, 0, 100), item(B, 110, 310), item(A, 320, 420)];
        let out = correct_oscillations(&a_first, &stays_cfg(11.0)).unwrap();
        assert!(out.iter().all(|i| i.location == A));
        let b_first = [item(B, 0, 100), item(A, 110, 310), item(B, 320, 420)];
        let out = correct_oscillations(&b_first, &stays_cfg(11.0)).unwrap();
        assert!(out.iter().all(|i| i.location == B));
    }

    #[test]
    fn nothing_flagged_is_identity() {
        let items = [item(A, 0, 10), item(B, 20, 30)];
        assert_eq!(correct_oscillations(&items, &stays_cfg(11.0)).unwrap(), items.to_vec());
    }

    #[test]
    fn records_snap_within_ten_metres() {
        // jitter of a few metres around A still counts as A
        let a2 = LatLon::new(0.00002, 0.00001);
        assert_eq!(grid_key(A, RECORD_SNAP_M), grid_key(LatLon::new(0.00001, 0.00001), RECORD_SNAP_M));
        let items = [
            OscItem::point(A, 0),
            OscItem::point(A, 60),
            OscItem::point(B, 90),
            OscItem::point(a2, 120),
        ];
        let cfg = OscConfig::new(5.0, ItemKind::records(0));
        let fixed = correct_oscillations_detailed(&items, &cfg).unwrap();
        assert_eq!(fixed.rewritten, vec![false, false, true, false]);
        assert_eq!(fixed.items[2].location, A);
    }

    fn stay(loc: LatLon, start: i64, end: i64) -> Stay {
        Stay {
            device_id: "u".into(),
            centroid: loc,
            start,
            end,
            record_count: 2,
            source: Source::Cellular,
        }
    }

    fn stay_trace(stays: &[Stay]) -> StayTrace {
        let mut recs = Vec::new();
        let mut membership = Vec::new();
        for (i, s) in stays.iter().enumerate() {
            for t in [s.start, s.end] {
                recs.push(LocationRecord::new("u", t, s.centroid.lat, s.centroid.lon, 500.0));
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

    #[test]
    fn post_correction_merges_rewritten_runs() {
        let t = stay_trace(&[stay(A, 0, 300), stay(B, 360, 660), stay(A, 650, 1300), stay(C, 5000, 6000)]);
        let out = correct_trace_stays(&t, 11.0, true).unwrap();
        out.check().unwrap();
        assert_eq!(out.stays.len(), 2);
        assert_eq!((out.stays[0].start, out.stays[0].end), (0, 1300));
        assert_eq!(out.stays[0].record_count, 6);
        let relabel_only = correct_trace_stays(&t, 11.0, false).unwrap();
        assert_eq!(relabel_only.stays.len(), 4);
        assert_eq!(relabel_only.stays[1].centroid, A);
    }

    #[test]
    fn unrewritten_neighbours_stay_separate() {
        let t = stay_trace(&[stay(A, 0, 300), stay(A, 400, 700)]);
        assert_eq!(correct_trace_stays(&t, 11.0, true).unwrap(), t);
    }
}
