//! Shared fixtures for the benchmarks under `benches/`.

use camdensity_core::mvcalib::{builtin_models, VehicleAnnotation, VehicleMatch, VehicleModel};
use camdensity_core::synth::{generate_scene, SceneSpec};
use camdensity_core::{CameraParams, ImageSize};

pub struct CalibFixture {
    pub size: ImageSize,
    pub camera: CameraParams,
    pub models: Vec<VehicleModel>,
    pub annotations: Vec<VehicleAnnotation>,
    /// Each vehicle matched to its true model at the true camera.
    pub matches: Vec<VehicleMatch>,
}

/// A seeded synthetic scene with `n_vehicles` vehicles and 0.5 px noise.
pub fn calib_fixture(seed: u64, n_vehicles: usize) -> CalibFixture {
    let models = builtin_models();
    let scene =
        generate_scene(seed, n_vehicles, &models, &SceneSpec::default(), 0.5).expect("scene");
    let matches = scene
        .vehicles
        .iter()
        .map(|v| VehicleMatch {
            vehicle_index: v.vehicle_index,
            model_index: v.model_index,
            model_name: v.model_name.clone(),
            params: scene.camera,
            candidate_loss: 0.0,
            refined_loss: 0.0,
        })
        .collect();
    CalibFixture {
        size: scene.image_size,
        camera: scene.camera,
        models,
        annotations: scene.annotations,
        matches,
    }
}
