//! Camera calibration from vehicle keypoints and lane-level traffic density
//! estimation for low-resolution roadside cameras.

// Checks such as `!(x > 0.0)` deliberately reject NaN as well; the simplex
// and EPnP code index rows and columns explicitly.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dataset_mixer;
pub mod density;
pub mod detection;
pub mod fd_fit;
pub mod geometry;
pub mod io;
pub mod measurement;
pub mod mvcalib;
pub mod optimize;
pub mod pnp;
pub mod synth;

pub use geometry::{CameraParams, ImageSize, Point2, Point3, Rotation};
pub use measurement::ErrorMetrics;
