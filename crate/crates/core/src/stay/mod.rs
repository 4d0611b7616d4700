//! Stay detection: trace segmentation, incremental clustering and the stay
//! duration calculator.

mod duration;
mod incremental;
mod segmentation;
mod trace;

pub use duration::{stay_duration_filter, stay_duration_filter_labeled};
pub use incremental::{
    cluster_points, cluster_trace_records, cluster_trace_stays, incremental_cluster_records,
    incremental_cluster_stays, incremental_pass, kmeans_refine, kmeans_refine_traced,
    ClusterAssignment, KMEANS_MAX_ITERATIONS, KMEANS_TOLERANCE_KM,
};
pub use segmentation::{segment_records, segment_trace, trace_segmentation};
pub use trace::StayTrace;
