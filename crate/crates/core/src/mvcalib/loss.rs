//! Projection, back-projection and fine-tuning losses.

use crate::geometry::{pixel_to_plane, project, CameraParams, GeometryError, ImageSize, Point3};

use super::{Keypoint, VehicleAnnotation, VehicleModel};

/// Sum of pixel distances between annotated and projected keypoints.
///
/// Keypoints missing from either side are ignored. Any keypoint behind the
/// camera, or a non-positive focal length, gives `+∞`.
pub fn projection_loss(
    params: &CameraParams,
    annotation: &VehicleAnnotation,
    model: &VehicleModel,
    size: ImageSize,
) -> f64 {
    if !(params.focal > 0.0) {
        return f64::INFINITY;
    }
    let mut loss = 0.0;
    for (k, p) in &annotation.keypoints {
        let Some(q) = model.keypoints.get(k) else {
            continue;
        };
        match project(q, params, size) {
            Ok(r) => loss += (r - p).norm(),
            Err(_) => return f64::INFINITY,
        }
    }
    loss
}

/// World points for each annotated keypoint of a vehicle, seen through a
/// camera expressed in the anchor frame.
///
/// Each ray is cut by the horizontal plane at that keypoint's model height.
pub fn back_project_points(
    annotation: &VehicleAnnotation,
    model: &VehicleModel,
    params: &CameraParams,
    size: ImageSize,
) -> Result<Vec<(Keypoint, Point3)>, GeometryError> {
    annotation
        .keypoints
        .iter()
        .filter_map(|(k, p)| model.keypoints.get(k).map(|q| (*k, p, q.z)))
        .map(|(k, p, z)| pixel_to_plane(p, params, size, z).map(|x| (k, x)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairLoss {
    pub loss: f64,
    pub pairs: usize,
    /// Pairs skipped because one of the two vectors had zero length.
    pub degenerate: usize,
}

/// Pairwise length and direction disagreement between back-projected points
/// and the model: `Σ |‖P̂₁P̂₂‖ − ‖P₁P₂‖| + α·sin∠(P̂₁P̂₂, P₁P₂)`.
pub fn fine_tune_loss(points: &[(Keypoint, Point3)], model: &VehicleModel, alpha: f64) -> PairLoss {
    let mut out = PairLoss::default();
    for (a, (ka, pa)) in points.iter().enumerate() {
        let Some(ma) = model.keypoints.get(ka) else {
            continue;
        };
        for (kb, pb) in &points[a + 1..] {
            let Some(mb) = model.keypoints.get(kb) else {
                continue;
            };
            let v_hat = pb - pa;
            let v = mb - ma;
            let (n_hat, n) = (v_hat.norm(), v.norm());
            if n_hat == 0.0 || n == 0.0 {
                out.degenerate += 1;
                continue;
            }
            let cos = (v_hat.dot(&v) / (n_hat * n)).clamp(-1.0, 1.0);
            out.loss += (n_hat - n).abs() + alpha * (1.0 - cos * cos).max(0.0).sqrt();
            out.pairs += 1;
        }
    }
    out
}

pub fn centroid(points: &[(Keypoint, Point3)]) -> Point3 {
    let sum = points
        .iter()
        .fold(nalgebra::Vector3::zeros(), |acc, (_, p)| acc + p.coords);
    Point3::from(sum / points.len() as f64)
}

/// Softmax of `τ·‖Ĉᵢ − Ĉ_anchor‖` over all vehicles.
pub fn anchor_weight(centroids: &[Point3], anchor: usize, tau: f64) -> Vec<f64> {
    let logits: Vec<f64> = centroids
        .iter()
        .map(|c| tau * (c - centroids[anchor]).norm())
        .collect();
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
