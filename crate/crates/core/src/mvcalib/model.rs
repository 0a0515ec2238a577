use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::{Point2, Point3};

use super::CalibError;

/// The eight annotated vehicle keypoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Keypoint {
    LeftHeadlight,
    RightHeadlight,
    FrontPlateCenter,
    FrontWiperCenter,
    LeftWingMirror,
    RightWingMirror,
    BackLeftCorner,
    BackRightCorner,
}

impl Keypoint {
    pub const ALL: [Keypoint; 8] = [
        Keypoint::LeftHeadlight,
        Keypoint::RightHeadlight,
        Keypoint::FrontPlateCenter,
        Keypoint::FrontWiperCenter,
        Keypoint::LeftWingMirror,
        Keypoint::RightWingMirror,
        Keypoint::BackLeftCorner,
        Keypoint::BackRightCorner,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Keypoint::LeftHeadlight => "left_headlight",
            Keypoint::RightHeadlight => "right_headlight",
            Keypoint::FrontPlateCenter => "front_plate_center",
            Keypoint::FrontWiperCenter => "front_wiper_center",
            Keypoint::LeftWingMirror => "left_wing_mirror",
            Keypoint::RightWingMirror => "right_wing_mirror",
            Keypoint::BackLeftCorner => "back_left_corner",
            Keypoint::BackRightCorner => "back_right_corner",
        }
    }
}

impl fmt::Display for Keypoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Keypoint {
    type Err = CalibError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Keypoint::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CalibError::UnknownKeypoint(s.to_string()))
    }
}

/// Annotated image keypoints of one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleAnnotation {
    pub vehicle_index: usize,
    pub keypoints: BTreeMap<Keypoint, Point2>,
}

impl VehicleAnnotation {
    pub fn validate(&self) -> Result<(), CalibError> {
        if self.keypoints.is_empty() {
            return Err(CalibError::InvalidAnnotation {
                vehicle_index: self.vehicle_index,
                reason: "no keypoints".into(),
            });
        }
        if let Some((k, _)) = self
            .keypoints
            .iter()
            .find(|(_, p)| !(p.x.is_finite() && p.y.is_finite()))
        {
            return Err(CalibError::InvalidAnnotation {
                vehicle_index: self.vehicle_index,
                reason: format!("non-finite coordinate for {k}"),
            });
        }
        Ok(())
    }

    /// Matched 3D/2D correspondences against `model`, in canonical order.
    pub fn correspondences(&self, model: &VehicleModel) -> (Vec<Point3>, Vec<Point2>) {
        self.keypoints
            .iter()
            .filter_map(|(k, p)| model.keypoints.get(k).map(|q| (*q, *p)))
            .unzip()
    }
}

/// A 3D vehicle model in its local frame.
///
/// `x` points to the vehicle's right, `y` forward, `z` up; the ground is
/// `z = 0` and the origin sits under the centre of the footprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleModel {
    pub name: String,
    pub keypoints: BTreeMap<Keypoint, Point3>,
}

impl VehicleModel {
    pub fn validate(&self) -> Result<(), CalibError> {
        let bad = |reason: String| CalibError::InvalidModel {
            name: self.name.clone(),
            reason,
        };
        for k in Keypoint::ALL {
            match self.keypoints.get(&k) {
                None => return Err(bad(format!("missing keypoint {k}"))),
                Some(p) if !p.coords.iter().all(|v| v.is_finite()) => {
                    return Err(bad(format!("non-finite coordinate for {k}")))
                }
                Some(p) if p.z < 0.0 => {
                    return Err(bad(format!("{k} lies below the ground plane")))
                }
                _ => {}
            }
        }
        let pts: Vec<_> = self.keypoints.iter().collect();
        for (a, (ka, pa)) in pts.iter().enumerate() {
            for (kb, pb) in &pts[a + 1..] {
                if (*pa - *pb).norm() <= 0.0 {
                    return Err(bad(format!("{ka} and {kb} coincide")));
                }
            }
        }
        Ok(())
    }

    /// Keypoints laid out from overall dimensions in meters.
    pub fn from_dimensions(name: &str, length: f64, width: f64, height: f64) -> Self {
        let (hl, hw) = (length / 2.0, width / 2.0);
        let mirror_y = hl - 1.75;
        let mirror_z = 0.7 * height;
        let corner_z = 0.62 * height;
        let keypoints = BTreeMap::from([
            (
                Keypoint::LeftHeadlight,
                Point3::new(-(hw - 0.2), hl - 0.08, 0.70),
            ),
            (
                Keypoint::RightHeadlight,
                Point3::new(hw - 0.2, hl - 0.08, 0.70),
            ),
            (Keypoint::FrontPlateCenter, Point3::new(0.0, hl, 0.45)),
            (
                Keypoint::FrontWiperCenter,
                Point3::new(0.0, hl - 1.3, 0.66 * height),
            ),
            (
                Keypoint::LeftWingMirror,
                Point3::new(-(hw + 0.05), mirror_y, mirror_z),
            ),
            (
                Keypoint::RightWingMirror,
                Point3::new(hw + 0.05, mirror_y, mirror_z),
            ),
            (
                Keypoint::BackLeftCorner,
                Point3::new(-0.95 * hw, -hl + 0.05, corner_z),
            ),
            (
                Keypoint::BackRightCorner,
                Point3::new(0.95 * hw, -hl + 0.05, corner_z),
            ),
        ]);
        Self {
            name: name.to_string(),
            keypoints,
        }
    }

    /// Horizontal footprint `(length, width)` spanned by the keypoints.
    pub fn footprint(&self) -> (f64, f64) {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in self.keypoints.values() {
            x0 = x0.min(p.x);
            x1 = x1.max(p.x);
            y0 = y0.min(p.y);
            y1 = y1.max(p.y);
        }
        (y1 - y0, x1 - x0)
    }
}

/// Five common sedans with approximate catalogue dimensions.
pub fn builtin_models() -> Vec<VehicleModel> {
    [
        ("Toyota Corolla", 4.63, 1.78, 1.435),
        ("Toyota Prius", 4.54, 1.76, 1.47),
        ("Honda Civic", 4.67, 1.80, 1.415),
        ("BMW 4 Series", 4.64, 1.85, 1.38),
        ("Tesla Model S", 4.97, 1.96, 1.445),
    ]
    .into_iter()
    .map(|(n, l, w, h)| VehicleModel::from_dimensions(n, l, w, h))
    .collect()
}
