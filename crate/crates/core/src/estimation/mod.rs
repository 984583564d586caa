//! Static state estimation, bad-data processing, observability and
//! stealthy-attack construction.

mod linear;
mod measurement;
mod observability;
mod wls;

pub use linear::{
    bad_data_scan, build_attack, critical_measurements, dc_linear_se, fuse_prior, AttackVector, BadDataOptions,
    BadDataReport,
};
pub use measurement::{
    dc_design, dc_design_points, full_plan, measurement_values, reduce_and_whiten, simulate_measurements, End,
    Location, MeasKind, MeasPoint, MeasValue, Measurement, MeasurementSet,
};
pub use observability::{observability_numerical, observability_topological, Observability};
pub use wls::{wls_gauss_newton, EstimationResult, WlsOptions};
