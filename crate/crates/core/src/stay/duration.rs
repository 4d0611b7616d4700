//! Stay duration calculator.

use crate::model::{LabeledRecord, StayLabel};

use super::StayTrace;

/// Drops stays lasting less than `duration_min`; their records become
/// transient. Durations are `end - start` of each stay.
pub fn stay_duration_filter(trace: &StayTrace, duration_min: f64) -> StayTrace {
    let min = duration_min * 60.0;
    let mut out = trace.clone();
    out.retain_stays(|s| s.duration_seconds() as f64 >= min);
    out
}

/// Same rule over bare labeled records, for inputs that carry no stay
/// identities. A stay is a maximal run of consecutive records of one device
/// sharing an identical stay location; its duration is recomputed from the
/// run's first and last timestamps.
pub fn stay_duration_filter_labeled(labeled: &[LabeledRecord], duration_min: f64) -> Vec<LabeledRecord> {
    let min = duration_min * 60.0;
    let mut out = labeled.to_vec();
    let same_run = |a: &LabeledRecord, b: &LabeledRecord| match (a.stay, b.stay) {
        (Some(x), Some(y)) => {
            a.record.device_id == b.record.device_id && x.lat == y.lat && x.lon == y.lon
        }
        _ => false,
    };
    let mut start = 0;
    while start < out.len() {
        let mut end = start + 1;
        while end < out.len() && same_run(&out[start], &out[end]) {
            end += 1;
        }
        if let Some(label) = out[start].stay {
            let span = out[end - 1].record.timestamp - out[start].record.timestamp;
            let stay = (span as f64 >= min).then_some(StayLabel {
                duration_min: span as f64 / 60.0,
                ..label
            });
            for r in &mut out[start..end] {
                r.stay = stay;
            }
        }
        start = end;
    }
    out
}
