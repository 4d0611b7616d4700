//! Inference of stays, trips and mobility metrics from passively generated
//! mobile location records.
//!
//! Processing stages (trace segmentation, incremental clustering, the stay
//! duration calculator, the oscillation corrector and the stay integrator) are
//! composed into workflows by [`pipeline`], which runs users in parallel.

pub mod model;
pub mod stay;

pub use model::{
    haversine_km, mean_centroid, ChangePoints, DayTrajectory, LabeledRecord, LatLon, LocalDay,
    LocationRecord, ModelError, Source, Stay, StayLabel,
};
pub mod oscillation;
pub mod integrator;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod io;
