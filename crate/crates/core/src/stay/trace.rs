use std::ops::Range;

use crate::model::{LabeledRecord, LatLon, LocationRecord, Stay, StayLabel, Source};

/// One user's records together with the stays inferred from them.
///
/// `membership[i]` is the index into `stays` of the stay record `i` belongs to,
/// or `None` for a transient point. Stays are kept ordered by start time.
#[derive(Debug, Clone, PartialEq)]
pub struct StayTrace {
    pub device_id: String,
    pub records: Vec<LocationRecord>,
    pub membership: Vec<Option<usize>>,
    pub stays: Vec<Stay>,
}

impl StayTrace {
    /// A trace with no stays; every record is transient.
    pub fn raw(device_id: impl Into<String>, records: Vec<LocationRecord>) -> Self {
        let n = records.len();
        Self {
            device_id: device_id.into(),
            records,
            membership: vec![None; n],
            stays: Vec::new(),
        }
    }

    /// Builds stays from disjoint, ordered index runs of `records`.
    pub fn from_runs(
        device_id: impl Into<String>,
        records: Vec<LocationRecord>,
        runs: &[(Range<usize>, LatLon)],
        source: Source,
    ) -> Self {
        let mut trace = Self::raw(device_id, records);
        for (range, centroid) in runs {
            let idx = trace.stays.len();
            for m in trace.membership[range.clone()].iter_mut() {
                *m = Some(idx);
            }
            trace.stays.push(Stay {
                device_id: trace.device_id.clone(),
                centroid: *centroid,
                start: trace.records[range.start].timestamp,
                end: trace.records[range.end - 1].timestamp,
                record_count: range.len(),
                source,
            });
        }
        trace.sort_stays();
        trace
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record indices of each stay.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.stays.len()];
        for (i, m) in self.membership.iter().enumerate() {
            if let Some(s) = m {
                out[*s].push(i);
            }
        }
        out
    }

    /// Drops stays failing `keep`; their records become transient.
    pub fn retain_stays(&mut self, mut keep: impl FnMut(&Stay) -> bool) {
        let mut remap = vec![None; self.stays.len()];
        let mut kept = Vec::with_capacity(self.stays.len());
        for (i, stay) in std::mem::take(&mut self.stays).into_iter().enumerate() {
            if keep(&stay) {
                remap[i] = Some(kept.len());
                kept.push(stay);
            }
        }
        self.stays = kept;
        for m in self.membership.iter_mut() {
            *m = m.and_then(|s| remap[s]);
        }
    }

    /// Restores start-time order of `stays` (ties broken by end, then centroid).
    pub fn sort_stays(&mut self) {
        let mut order: Vec<usize> = (0..self.stays.len()).collect();
        order.sort_by(|&a, &b| {
            let (x, y) = (&self.stays[a], &self.stays[b]);
            (x.start, x.end)
                .cmp(&(y.start, y.end))
                .then(x.centroid.lat.total_cmp(&y.centroid.lat))
                .then(x.centroid.lon.total_cmp(&y.centroid.lon))
                .then(a.cmp(&b))
        });
        if order.iter().enumerate().all(|(i, &o)| i == o) {
            return;
        }
        let mut remap = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        let old = std::mem::take(&mut self.stays);
        self.stays = order.iter().map(|&o| old[o].clone()).collect();
        for m in self.membership.iter_mut() {
            *m = m.map(|s| remap[s]);
        }
    }

    /// Per-record output with the stay location and duration attached.
    pub fn labeled(&self) -> Vec<LabeledRecord> {
        self.records
            .iter()
            .zip(&self.membership)
            .map(|(r, m)| LabeledRecord {
                record: r.clone(),
                stay: m.map(|s| {
                    let stay = &self.stays[s];
                    StayLabel {
                        lat: stay.centroid.lat,
                        lon: stay.centroid.lon,
                        duration_min: stay.duration_min(),
                    }
                }),
            })
            .collect()
    }

    /// Checks the structural invariants; used by debug assertions and tests.
    pub fn check(&self) -> Result<(), String> {
        if self.records.len() != self.membership.len() {
            return Err("membership length mismatch".into());
        }
        let members = self.members();
        for (i, stay) in self.stays.iter().enumerate() {
            if stay.end < stay.start {
                return Err(format!("stay {i} ends before it starts"));
            }
            if stay.record_count == 0 || stay.record_count != members[i].len() {
                return Err(format!(
                    "stay {i} record_count {} but {} members",
                    stay.record_count,
                    members[i].len()
                ));
            }
        }
        if self.stays.windows(2).any(|w| w[1].start < w[0].start) {
            return Err("stays out of order".into());
        }
        Ok(())
    }
}
