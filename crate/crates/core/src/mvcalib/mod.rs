//! Multi-vehicle camera calibration.
//!
//! Three stages: EPnP candidates for every vehicle/model pair at a fixed
//! focal length, per-vehicle model matching with the focal length freed, and
//! a joint fine-tuning of one camera over all vehicles for each choice of
//! anchor vehicle.

mod loss;
mod model;
mod pipeline;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::GeometryError;
use crate::optimize::{CmaConfig, OptimizeError};
use crate::pnp::RansacConfig;

pub use loss::{
    anchor_weight, back_project_points, centroid, fine_tune_loss, projection_loss, PairLoss,
};
pub use model::{builtin_models, Keypoint, VehicleAnnotation, VehicleModel};
pub use pipeline::{
    candidate_baseline, candidate_generation, fine_tune, model_matching, run_pipeline, AnchorRun,
    CalibResult, Candidate, CandidateSet, FineTuneObjective, SkippedPair, StageLosses,
    VehicleMatch,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibError {
    #[error("no vehicle has the 4 keypoints needed for pose estimation")]
    NoFeasibleVehicle,
    #[error("unknown keypoint name {0:?}")]
    UnknownKeypoint(String),
    #[error("vehicle {vehicle_index}: {reason}")]
    InvalidAnnotation {
        vehicle_index: usize,
        reason: String,
    },
    #[error("vehicle model {name:?}: {reason}")]
    InvalidModel { name: String, reason: String },
    #[error("model library is empty")]
    EmptyModelLibrary,
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibConfig {
    /// Focal length in pixels used for the candidate stage.
    pub focal_default: f64,
    /// Weight of the direction term in the pairwise loss.
    pub alpha: f64,
    /// Distance decay of the anchor weighting, per meter.
    pub tau: f64,
    /// Model matching optimizer; its seed is replaced per vehicle/model run.
    pub stage2: CmaConfig,
    /// Fine-tuning optimizer; its seed is replaced per anchor.
    pub stage3: CmaConfig,
    pub ransac: RansacConfig,
    pub seed: u64,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            focal_default: 350.0,
            alpha: 6.0,
            tau: -0.5,
            stage2: CmaConfig::with_budget(4_000, 0),
            stage3: CmaConfig::with_budget(20_000, 0),
            ransac: RansacConfig::default(),
            seed: 0,
        }
    }
}

/// splitmix64 over the master seed and a few identifying integers.
pub(crate) fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(master), |acc, p| mix(acc ^ mix(*p)))
}
