//! Incremental clustering with k-means refinement.
//!
//! The incremental pass visits points in input order and joins each one to the
//! nearest existing center when it is strictly closer than the distance
//! threshold, updating that center as a running mean. Because the pass is
//! order-sensitive, Lloyd iterations seeded at the incremental centers follow.

use crate::model::{
    check_sorted, haversine_km, mean_centroid, ChangePoints, LatLon, LocalDay, LocationRecord,
    ModelError, Source, Stay, EARTH_RADIUS_KM,
};

use super::StayTrace;

pub const KMEANS_TOLERANCE_KM: f64 = 1e-6;
pub const KMEANS_MAX_ITERATIONS: usize = 100;

/// Cluster membership over a set of points.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub points: Vec<LatLon>,
    /// Cluster index per point, `None` for a transient point.
    pub labels: Vec<Option<usize>>,
    pub centers: Vec<LatLon>,
    pub members: Vec<Vec<usize>>,
}

impl ClusterAssignment {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Rebuilds members and centers from `labels`, dropping empty clusters.
    fn rebuild(points: Vec<LatLon>, labels: Vec<Option<usize>>, k: usize) -> Self {
        let mut members = vec![Vec::new(); k];
        for (i, l) in labels.iter().enumerate() {
            if let Some(c) = l {
                members[*c].push(i);
            }
        }
        let mut remap = vec![None; k];
        let mut kept = Vec::new();
        for (c, m) in members.into_iter().enumerate() {
            if !m.is_empty() {
                remap[c] = Some(kept.len());
                kept.push(m);
            }
        }
        let labels = labels.into_iter().map(|l| l.and_then(|c| remap[c])).collect();
        let centers = kept
            .iter()
            .map(|m| {
                let pts: Vec<_> = m.iter().map(|&i| points[i]).collect();
                mean_centroid(&pts).expect("non-empty cluster")
            })
            .collect();
        Self {
            points,
            labels,
            centers,
            members: kept,
        }
    }
}

fn nearest(centers: &[LatLon], p: LatLon) -> Option<(usize, f64)> {
    centers
        .iter()
        .map(|c| haversine_km(*c, p))
        .enumerate()
        .fold(None, |best, (i, d)| match best {
            Some((_, bd)) if bd <= d => best,
            _ => Some((i, d)),
        })
}

/// Single order-dependent pass; every point ends up in some cluster.
pub fn incremental_pass(points: &[LatLon], threshold_km: f64) -> ClusterAssignment {
    let mut sums: Vec<(f64, f64, usize)> = Vec::new();
    let mut centers: Vec<LatLon> = Vec::new();
    let mut labels = Vec::with_capacity(points.len());
    for &p in points {
        match nearest(&centers, p) {
            Some((c, d)) if d < threshold_km => {
                let s = &mut sums[c];
                s.0 += p.lat;
                s.1 += p.lon;
                s.2 += 1;
                centers[c] = LatLon::new(s.0 / s.2 as f64, s.1 / s.2 as f64);
                labels.push(Some(c));
            }
            _ => {
                labels.push(Some(centers.len()));
                centers.push(p);
                sums.push((p.lat, p.lon, 1));
            }
        }
    }
    let k = centers.len();
    ClusterAssignment::rebuild(points.to_vec(), labels, k)
}

/// Incremental pass over a user's time-sorted records (one or many days).
pub fn incremental_cluster_records(
    records: &[LocationRecord],
    cp: &ChangePoints,
) -> Result<ClusterAssignment, ModelError> {
    if records.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    check_sorted(records)?;
    let pts: Vec<_> = records.iter().map(LocationRecord::position).collect();
    Ok(incremental_pass(&pts, cp.distance_km))
}

/// Local equirectangular frame in km. The map is affine in degrees, so the
/// arithmetic mean of degrees is also the Euclidean mean in this frame.
struct Plane {
    kx: f64,
    ky: f64,
}

impl Plane {
    fn around(points: &[LatLon]) -> Self {
        let lat0 = points.iter().map(|p| p.lat).sum::<f64>() / points.len().max(1) as f64;
        let ky = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
        Self {
            kx: ky * lat0.to_radians().cos(),
            ky,
        }
    }

    fn dist2(&self, a: LatLon, b: LatLon) -> f64 {
        let dx = (a.lon - b.lon) * self.kx;
        let dy = (a.lat - b.lat) * self.ky;
        dx * dx + dy * dy
    }
}

fn wcss(plane: &Plane, a: &ClusterAssignment) -> f64 {
    a.labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.map(|c| plane.dist2(a.points[i], a.centers[c])))
        .sum()
}

/// Lloyd refinement; see [`kmeans_refine_traced`].
pub fn kmeans_refine(assignment: ClusterAssignment) -> ClusterAssignment {
    kmeans_refine_traced(assignment).0
}

/// Lloyd iterations with k seeded from the current centers. Also returns the
/// within-cluster sum of squares after every iteration, starting with the
/// input's.
///
/// Stops once no center moves more than [`KMEANS_TOLERANCE_KM`] or after
/// [`KMEANS_MAX_ITERATIONS`]. Clusters that lose every member are dropped.
pub fn kmeans_refine_traced(assignment: ClusterAssignment) -> (ClusterAssignment, Vec<f64>) {
    if assignment.is_empty() {
        return (assignment, vec![0.0]);
    }
    let clustered: Vec<LatLon> = assignment
        .labels
        .iter()
        .zip(&assignment.points)
        .filter_map(|(l, p)| l.map(|_| *p))
        .collect();
    let plane = Plane::around(&clustered);
    let mut current = assignment;
    let mut trace = vec![wcss(&plane, &current)];
    for _ in 0..KMEANS_MAX_ITERATIONS {
        let labels: Vec<Option<usize>> = current
            .labels
            .iter()
            .zip(&current.points)
            .map(|(l, p)| {
                l.map(|prev| {
                    let mut best = prev;
                    let mut best_d = plane.dist2(*p, current.centers[prev]);
                    for (c, center) in current.centers.iter().enumerate() {
                        let d = plane.dist2(*p, *center);
                        if d < best_d || (d == best_d && c < best) {
                            best = c;
                            best_d = d;
                        }
                    }
                    best
                })
            })
            .collect();
        let k = current.centers.len();
        let next = ClusterAssignment::rebuild(current.points.clone(), labels, k);
        let moved = if next.centers.len() == k {
            current
                .centers
                .iter()
                .zip(&next.centers)
                .map(|(a, b)| haversine_km(*a, *b))
                .fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        trace.push(wcss(&plane, &next));
        current = next;
        if moved <= KMEANS_TOLERANCE_KM {
            break;
        }
    }
    (current, trace)
}

/// Incremental pass followed by refinement.
pub fn cluster_points(points: &[LatLon], threshold_km: f64) -> ClusterAssignment {
    kmeans_refine(incremental_pass(points, threshold_km))
}

/// Clusters stay locations. Stays shorter than the duration threshold are
/// dropped first; the survivors keep their times and take their cluster's
/// center as the new centroid.
pub fn incremental_cluster_stays(stays: &[Stay], cp: &ChangePoints) -> Vec<Stay> {
    let min = cp.duration_seconds();
    let mut kept: Vec<Stay> = stays
        .iter()
        .filter(|s| s.duration_seconds() as f64 >= min)
        .cloned()
        .collect();
    relabel_centroids(&mut kept, cp.distance_km);
    kept
}

pub(crate) fn relabel_centroids(stays: &mut [Stay], threshold_km: f64) {
    if stays.is_empty() {
        return;
    }
    let pts: Vec<_> = stays.iter().map(|s| s.centroid).collect();
    let clusters = cluster_points(&pts, threshold_km);
    for (stay, label) in stays.iter_mut().zip(&clusters.labels) {
        if let Some(c) = label {
            stay.centroid = clusters.centers[*c];
        }
    }
}

/// Stays of a clustered trace: maximal runs of consecutive records sharing a
/// cluster, split at local midnight. Runs are unfiltered; the duration stage
/// prunes them.
pub fn cluster_trace_records(
    device_id: &str,
    records: Vec<LocationRecord>,
    cp: &ChangePoints,
    utc_offset_s: i64,
    source: Source,
) -> Result<StayTrace, ModelError> {
    if records.is_empty() {
        return Ok(StayTrace::raw(device_id, records));
    }
    let clusters = kmeans_refine(incremental_cluster_records(&records, cp)?);
    let mut runs = Vec::new();
    let mut start = 0;
    let key = |i: usize| (clusters.labels[i], LocalDay::of(records[i].timestamp, utc_offset_s));
    for i in 1..=records.len() {
        if i == records.len() || key(i) != key(start) {
            if let Some(c) = clusters.labels[start] {
                runs.push((start..i, clusters.centers[c]));
            }
            start = i;
        }
    }
    Ok(StayTrace::from_runs(device_id, records, &runs, source))
}

/// Stay-mode clustering applied to a trace.
pub fn cluster_trace_stays(trace: &StayTrace, cp: &ChangePoints) -> StayTrace {
    let mut out = trace.clone();
    let min = cp.duration_seconds();
    out.retain_stays(|s| s.duration_seconds() as f64 >= min);
    relabel_centroids(&mut out.stays, cp.distance_km);
    out
}
