//! Classification, calibration and out-of-distribution metrics.

mod calibration;
mod geometry;
mod ood;
mod report;

pub use calibration::{msp, PredictionSet, DEFAULT_BINS};
pub use geometry::{
    centroid_distances, head_geometry, HeadDistance, HeadGeometryReport, DEFAULT_RIDGE_SCALE,
};
pub use ood::{aupr, auroc, fpr95};
pub use report::EvalReport;
