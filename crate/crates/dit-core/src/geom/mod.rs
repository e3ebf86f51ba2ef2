//! Point cloud and rigid-transform primitives, synthetic pair generation,
//! and evaluation metrics.

mod cloud;
mod metrics;
mod synth;
mod transform;

pub use cloud::PointCloud;
pub use metrics::{
    mae, rmse, rotation_error_deg, success_curve, success_curve_over, MetricsReport, PairError,
};
pub use synth::{make_pair, make_pair_with_ranges, sample_shape, PairMode, PairSample, Shape};
pub use transform::RigidTransform;

use thiserror::Error;

/// Errors from geometric construction and synthetic data generation.
#[derive(Debug, Error)]
pub enum GeomError {
    #[error("point cloud needs at least {min} points, got {got}")]
    TooFewPoints { min: usize, got: usize },
    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),
    #[error("rotation matrix is not a proper rotation (orthogonality/det check failed)")]
    InvalidRotation,
    #[error("unknown shape name `{0}` (expected sphere, cube, cylinder, torus or plane-cross)")]
    UnknownShape(String),
    #[error("cloud of {n} points is too small for partial mode (needs at least {min})")]
    CloudTooSmallForPartial { n: usize, min: usize },
    #[error("metrics require a non-empty error list")]
    EmptyErrorList,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
}
