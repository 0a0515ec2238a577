//! Synthetic road scenes with known camera and vehicle placements.
//!
//! The world frame is the road frame: `y` runs along the road, `x` across it
//! and the road surface is `z = 0`. Only geometry is produced, never pixels.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{BoundingBox, LaneGeometry};
use crate::geometry::{pixel_to_plane, project, CameraParams, ImageSize, Point2, Point3, Rotation};
use crate::measurement::GroundSegmentSet;
use crate::mvcalib::{VehicleAnnotation, VehicleModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("could not place the scene after {0} attempts")]
    PlacementFailure(usize),
    #[error("invalid scene specification: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub image: ImageSize,
    pub focal_px: (f64, f64),
    pub height_m: (f64, f64),
    /// Downward tilt of the optical axis.
    pub pitch_deg: (f64, f64),
    /// Camera heading relative to the road direction.
    pub camera_yaw_deg: (f64, f64),
    pub camera_roll_deg: (f64, f64),
    /// Lateral camera position relative to the road centre.
    pub camera_offset_m: (f64, f64),
    /// Vehicles deviate from the road direction by at most this much.
    pub vehicle_yaw_deg: f64,
    pub lanes: usize,
    pub lane_width_m: f64,
    /// Lateral jitter of a vehicle around its lane centre.
    pub lane_jitter_m: f64,
    pub marking_lines: usize,
    pub marking_points_per_line: usize,
    pub marking_spacing_m: f64,
    /// Pixel noise on marking points; vehicle keypoints use the scene noise.
    pub marking_noise_px: f64,
    /// Smallest accepted diagonal of a vehicle's keypoint bounding box.
    pub min_vehicle_px: f64,
    pub min_visible_keypoints: usize,
    /// Minimum downward angle of rays used to bound the usable road band.
    pub min_ray_depression_deg: f64,
    pub max_attempts: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            image: ImageSize::new(320.0, 240.0),
            focal_px: (200.0, 800.0),
            height_m: (4.0, 12.0),
            pitch_deg: (10.0, 45.0),
            camera_yaw_deg: (-15.0, 15.0),
            camera_roll_deg: (-2.0, 2.0),
            camera_offset_m: (-6.0, 6.0),
            vehicle_yaw_deg: 25.0,
            lanes: 3,
            lane_width_m: 3.5,
            lane_jitter_m: 0.4,
            marking_lines: 2,
            marking_points_per_line: 7,
            marking_spacing_m: 6.0,
            marking_noise_px: 0.0,
            min_vehicle_px: 25.0,
            min_visible_keypoints: 6,
            min_ray_depression_deg: 3.0,
            max_attempts: 2_000,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let range = |name: &str, (a, b): (f64, f64), lo: f64, hi: f64| {
            if a.is_finite() && b.is_finite() && lo <= a && a <= b && b <= hi {
                Ok(())
            } else {
                Err(SynthError::InvalidSpec(format!(
                    "{name} range ({a}, {b}) must lie within [{lo}, {hi}]"
                )))
            }
        };
        range("focal_px", self.focal_px, 1.0, 1e5)?;
        range("height_m", self.height_m, 0.5, 1e3)?;
        range("pitch_deg", self.pitch_deg, 1.0, 89.0)?;
        range("camera_yaw_deg", self.camera_yaw_deg, -89.0, 89.0)?;
        range("camera_roll_deg", self.camera_roll_deg, -45.0, 45.0)?;
        range("camera_offset_m", self.camera_offset_m, -1e3, 1e3)?;
        if self.lanes == 0 || !(self.lane_width_m > 0.0) {
            return Err(SynthError::InvalidSpec(
                "need at least one lane of positive width".into(),
            ));
        }
        if self.marking_lines > self.lanes + 1
            || self.marking_points_per_line < 2
            || !(self.marking_spacing_m > 0.0)
        {
            return Err(SynthError::InvalidSpec(
                "marking layout does not fit the lanes".into(),
            ));
        }
        if !(self.image.width > 0.0 && self.image.height > 0.0) {
            return Err(SynthError::InvalidSpec(
                "image size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Lateral positions of lane boundaries, left to right.
    fn lane_edges(&self) -> Vec<f64> {
        let half = self.lanes as f64 * self.lane_width_m / 2.0;
        (0..=self.lanes)
            .map(|i| -half + i as f64 * self.lane_width_m)
            .collect()
    }

    /// Boundaries carrying markings: the innermost ones first.
    fn marking_x(&self) -> Vec<f64> {
        let edges = self.lane_edges();
        let mut idx: Vec<usize> = (0..edges.len()).collect();
        let mid = self.lanes as f64 / 2.0;
        idx.sort_by(|a, b| {
            (*a as f64 - mid)
                .abs()
                .total_cmp(&(*b as f64 - mid).abs())
                .then(a.cmp(b))
        });
        let mut chosen: Vec<f64> = idx[..self.marking_lines]
            .iter()
            .map(|&i| edges[i])
            .collect();
        chosen.sort_by(f64::total_cmp);
        chosen
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedVehicle {
    pub vehicle_index: usize,
    pub model_index: usize,
    pub model_name: String,
    /// Footprint centre on the road.
    pub position: Point3,
    /// Heading about `z`; 0 faces along `+y`.
    pub yaw: f64,
    pub lane_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    pub image_size: ImageSize,
    pub camera: CameraParams,
    pub vehicles: Vec<PlacedVehicle>,
    pub annotations: Vec<VehicleAnnotation>,
    pub markings: GroundSegmentSet,
    pub marking_points_world: Vec<Vec<Point3>>,
    pub lanes: Vec<LaneGeometry>,
}

impl Scene {
    /// Image boxes around each vehicle's projected footprint; the centre of
    /// such a box lies close to the vehicle's ground position.
    pub fn ground_boxes(&self, models: &[VehicleModel]) -> Vec<BoundingBox> {
        self.vehicles
            .iter()
            .filter_map(|v| {
                let (l, w) = models[v.model_index].footprint();
                let corners = [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)]
                    .map(|(a, b)| to_world(v, &Point3::new(a * w, b * l, 0.0)));
                let px: Vec<Point2> = corners
                    .iter()
                    .map(|c| project(c, &self.camera, self.image_size).ok())
                    .collect::<Option<_>>()?;
                let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
                for p in &px {
                    x0 = x0.min(p.x);
                    y0 = y0.min(p.y);
                    x1 = x1.max(p.x);
                    y1 = y1.max(p.y);
                }
                BoundingBox::new(x0, y0, x1, y1, 1.0).ok()
            })
            .collect()
    }
}

fn to_world(v: &PlacedVehicle, local: &Point3) -> Point3 {
    let r = Rotation3::from_axis_angle(&Vector3::z_axis(), v.yaw);
    v.position + r * local.coords
}

/// Camera at `(offset, 0, height)` looking along the road, tilted down by
/// `pitch` and turned by `yaw`, with `roll` about the optical axis.
pub fn road_camera(
    focal: f64,
    height: f64,
    pitch: f64,
    yaw: f64,
    roll: f64,
    offset: f64,
) -> CameraParams {
    let forward = Vector3::new(
        yaw.sin() * pitch.cos(),
        yaw.cos() * pitch.cos(),
        -pitch.sin(),
    );
    let right = Vector3::new(yaw.cos(), -yaw.sin(), 0.0);
    let down = forward.cross(&right);
    let r0 = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let r = Rotation3::from_axis_angle(&Vector3::z_axis(), roll).matrix() * r0;
    let rotation = Rotation::from_matrix(r).expect("orthonormal by construction");
    let center = Vector3::new(offset, 0.0, height);
    CameraParams::new(focal, rotation, -(r * center))
}

fn uniform(rng: &mut ChaCha8Rng, (a, b): (f64, f64)) -> f64 {
    if a == b {
        a
    } else {
        rng.random_range(a..=b)
    }
}

/// Rectangles `(centre, yaw, half length, half width)` overlap test by
/// separating axes.
fn footprints_overlap(a: (Point3, f64, f64, f64), b: (Point3, f64, f64, f64)) -> bool {
    let axes = |yaw: f64| {
        [
            Vector3::new(yaw.cos(), yaw.sin(), 0.0),
            Vector3::new(-yaw.sin(), yaw.cos(), 0.0),
        ]
    };
    let (aa, ab) = (axes(a.1), axes(b.1));
    let d = b.0 - a.0;
    let radius = |ax: &[Vector3<f64>; 2], hl: f64, hw: f64, n: &Vector3<f64>| {
        hw * ax[0].dot(n).abs() + hl * ax[1].dot(n).abs()
    };
    aa.iter()
        .chain(ab.iter())
        .all(|n| d.dot(n).abs() <= radius(&aa, a.2, a.3, n) + radius(&ab, b.2, b.3, n))
}

/// Generates a scene with `n_vehicles` vehicles drawn from `models`.
pub fn generate_scene(
    seed: u64,
    n_vehicles: usize,
    models: &[VehicleModel],
    spec: &SceneSpec,
    noise_px: f64,
) -> Result<Scene, SynthError> {
    spec.validate()?;
    if n_vehicles == 0 || models.is_empty() {
        return Err(SynthError::InvalidSpec(
            "need at least one vehicle and one model".into(),
        ));
    }
    if !(noise_px >= 0.0) || !(spec.marking_noise_px >= 0.0) {
        return Err(SynthError::InvalidSpec("noise must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..spec.max_attempts {
        if let Some(scene) = try_scene(&mut rng, seed, n_vehicles, models, spec, noise_px) {
            return Ok(scene);
        }
    }
    Err(SynthError::PlacementFailure(spec.max_attempts))
}

fn try_scene(
    rng: &mut ChaCha8Rng,
    seed: u64,
    n_vehicles: usize,
    models: &[VehicleModel],
    spec: &SceneSpec,
    noise_px: f64,
) -> Option<Scene> {
    let size = spec.image;
    let focal = uniform(rng, spec.focal_px);
    let height = uniform(rng, spec.height_m);
    let pitch = uniform(rng, spec.pitch_deg).to_radians();
    let yaw = uniform(rng, spec.camera_yaw_deg).to_radians();
    let roll = uniform(rng, spec.camera_roll_deg).to_radians();
    let offset = uniform(rng, spec.camera_offset_m);
    let camera = road_camera(focal, height, pitch, yaw, roll, offset);

    // Usable road band: from the bottom image row up to the row whose ray
    // still dips by the minimum depression angle.
    let c = size.principal_point();
    let top_row = (c.y - focal * (pitch - spec.min_ray_depression_deg.to_radians()).tan()).max(0.0);
    let near = pixel_to_plane(&Point2::new(c.x, size.height), &camera, size, 0.0).ok()?;
    let far = pixel_to_plane(&Point2::new(c.x, top_row), &camera, size, 0.0).ok()?;
    let (y_lo, y_hi) = (near.y.max(0.0), far.y);
    let marking_span = spec.marking_spacing_m * (spec.marking_points_per_line - 1) as f64;
    if y_hi - y_lo < marking_span {
        return None;
    }

    let in_frame = |p: &Point2, margin: f64| {
        p.x >= margin && p.y >= margin && p.x <= size.width - margin && p.y <= size.height - margin
    };

    let marking_x = spec.marking_x();
    let marking_points_world = (0..20).find_map(|_| {
        let y0 = uniform(rng, (y_lo, y_hi - marking_span));
        let lines: Vec<Vec<Point3>> = marking_x
            .iter()
            .map(|&x| {
                (0..spec.marking_points_per_line)
                    .map(|i| Point3::new(x, y0 + i as f64 * spec.marking_spacing_m, 0.0))
                    .collect()
            })
            .collect();
        let ok = lines
            .iter()
            .flatten()
            .all(|p| project(p, &camera, size).is_ok_and(|q| in_frame(&q, 2.0)));
        ok.then_some(lines)
    })?;

    let edges = spec.lane_edges();
    let mut vehicles: Vec<PlacedVehicle> = Vec::with_capacity(n_vehicles);
    let mut footprints = Vec::with_capacity(n_vehicles);
    let mut true_pixels: Vec<BTreeMap<_, Point2>> = Vec::with_capacity(n_vehicles);
    for index in 0..n_vehicles {
        let placed = (0..200).find_map(|_| {
            let lane = rng.random_range(0..spec.lanes);
            let x = (edges[lane] + edges[lane + 1]) / 2.0
                + uniform(rng, (-spec.lane_jitter_m, spec.lane_jitter_m));
            let y = uniform(rng, (y_lo, y_hi));
            let heading = if rng.random_bool(0.5) {
                0.0
            } else {
                std::f64::consts::PI
            };
            let yaw =
                heading + uniform(rng, (-spec.vehicle_yaw_deg, spec.vehicle_yaw_deg)).to_radians();
            let model_index = rng.random_range(0..models.len());
            let model = &models[model_index];
            let (l, w) = model.footprint();
            let fp = (Point3::new(x, y, 0.0), yaw, l / 2.0 + 0.25, w / 2.0 + 0.25);
            if footprints
                .iter()
                .any(|other| footprints_overlap(fp, *other))
            {
                return None;
            }
            let v = PlacedVehicle {
                vehicle_index: index,
                model_index,
                model_name: model.name.clone(),
                position: fp.0,
                yaw,
                lane_id: lane as u32 + 1,
            };
            let pixels: BTreeMap<_, Point2> = model
                .keypoints
                .iter()
                .filter_map(|(k, p)| {
                    let q = project(&to_world(&v, p), &camera, size).ok()?;
                    in_frame(&q, 1.0).then_some((*k, q))
                })
                .collect();
            if pixels.len() < spec.min_visible_keypoints {
                return None;
            }
            let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
            for p in pixels.values() {
                x0 = x0.min(p.x);
                y0 = y0.min(p.y);
                x1 = x1.max(p.x);
                y1 = y1.max(p.y);
            }
            if ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt() < spec.min_vehicle_px {
                return None;
            }
            Some((v, fp, pixels))
        });
        let (v, fp, pixels) = placed?;
        vehicles.push(v);
        footprints.push(fp);
        true_pixels.push(pixels);
    }

    let mut jitter = |p: &Point2, sigma: f64| {
        if sigma == 0.0 {
            *p
        } else {
            let n = Normal::new(0.0, sigma).expect("valid sigma");
            Point2::new(p.x + n.sample(rng), p.y + n.sample(rng))
        }
    };
    let annotations = true_pixels
        .iter()
        .enumerate()
        .map(|(i, pixels)| VehicleAnnotation {
            vehicle_index: i,
            keypoints: pixels
                .iter()
                .map(|(k, p)| (*k, jitter(p, noise_px)))
                .filter(|(_, p)| in_frame(p, 0.0))
                .collect(),
        })
        .collect();
    let marking_lines = marking_points_world
        .iter()
        .map(|line| {
            line.iter()
                .map(|p| {
                    jitter(
                        &project(p, &camera, size).expect("checked above"),
                        spec.marking_noise_px,
                    )
                })
                .collect()
        })
        .collect();

    let lanes = (0..spec.lanes)
        .map(|i| {
            let corners = [
                Point3::new(edges[i], y_lo, 0.0),
                Point3::new(edges[i + 1], y_lo, 0.0),
                Point3::new(edges[i + 1], y_hi, 0.0),
                Point3::new(edges[i], y_hi, 0.0),
            ];
            let xc = (edges[i] + edges[i + 1]) / 2.0;
            let proj = |p: &Point3| {
                project(p, &camera, size).expect("road band is in front of the camera")
            };
            LaneGeometry {
                lane_id: i as u32 + 1,
                polygon: corners.iter().map(proj).collect(),
                centerline: vec![
                    proj(&Point3::new(xc, y_lo, 0.0)),
                    proj(&Point3::new(xc, y_hi, 0.0)),
                ],
                length_m: y_hi - y_lo,
            }
        })
        .collect();

    Some(Scene {
        seed,
        image_size: size,
        camera,
        vehicles,
        annotations,
        markings: GroundSegmentSet {
            lines: marking_lines,
            true_length_m: Some(spec.marking_spacing_m),
        },
        marking_points_world,
        lanes,
    })
}
