//! Pinhole camera model with a centred principal point.
//!
//! World points map to pixels through `s·[u v 1]ᵀ = K·[R|T]·[X Y Z 1]ᵀ` where
//! `K = [[f, 0, w/2], [0, f, h/2], [0, 0, 1]]`. Pixel coordinates have their
//! origin at the top-left corner with `u` pointing right and `v` down.
//!
//! Rotations are carried as matrices and converted to and from the
//! axis-angle vector `Θ = θ·d` with Rodrigues' formula, which is what lets a
//! full camera pose fit in the seven numbers `(f, Θ, T)`.

use nalgebra::{Matrix3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point2 = nalgebra::Point2<f64>;
pub type Point3 = nalgebra::Point3<f64>;

/// Tolerance on `RᵀR = I` and `det R = 1` accepted by [`Rotation::from_matrix`].
pub const ROTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {depth})")]
    PointBehindCamera { depth: f64 },
    #[error("ray is parallel to the plane z = {plane_z}")]
    RayParallelToPlane { plane_z: f64 },
    #[error("matrix is not a rotation (orthonormality error {orthonormality}, det {det})")]
    NotARotation { orthonormality: f64, det: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: f64,
    pub height: f64,
}

impl ImageSize {
    pub fn new(width: f64, height: f64) -> Self {
        Self { width, height }
    }

    pub fn principal_point(&self) -> Point2 {
        Point2::new(self.width / 2.0, self.height / 2.0)
    }

    pub fn contains(&self, p: &Point2) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width && p.y <= self.height
    }
}

/// Focal length plus image size: everything `K` needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub focal: f64,
    pub size: ImageSize,
}

impl Intrinsics {
    pub fn new(focal: f64, size: ImageSize) -> Result<Self, GeometryError> {
        if !(focal > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(
                "focal length must be positive",
            ));
        }
        if !(size.width > 0.0 && size.height > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(
                "image size must be positive",
            ));
        }
        Ok(Self { focal, size })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let c = self.size.principal_point();
        Matrix3::new(self.focal, 0.0, c.x, 0.0, self.focal, c.y, 0.0, 0.0, 1.0)
    }
}

/// A proper rotation in SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    matrix: Matrix3<f64>,
}

impl Rotation {
    pub fn identity() -> Self {
        Self {
            matrix: Matrix3::identity(),
        }
    }

    /// Validates orthonormality and a positive unit determinant.
    pub fn from_matrix(matrix: Matrix3<f64>) -> Result<Self, GeometryError> {
        let orthonormality = (matrix.transpose() * matrix - Matrix3::identity())
            .abs()
            .max();
        let det = matrix.determinant();
        if !(orthonormality < ROTATION_TOLERANCE) || !((det - 1.0).abs() < ROTATION_TOLERANCE) {
            return Err(GeometryError::NotARotation {
                orthonormality,
                det,
            });
        }
        Ok(Self { matrix })
    }

    pub fn from_axis_angle(theta: &Vector3<f64>) -> Self {
        Self {
            matrix: axis_angle_to_matrix(theta),
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn axis_angle(&self) -> Vector3<f64> {
        rotation_log(&self.matrix)
    }

    pub fn transpose(&self) -> Self {
        Self {
            matrix: self.matrix.transpose(),
        }
    }

    pub fn third_row(&self) -> Vector3<f64> {
        self.matrix.row(2).transpose()
    }
}

impl Serialize for Rotation {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let rows: [[f64; 3]; 3] =
            std::array::from_fn(|r| std::array::from_fn(|c| self.matrix[(r, c)]));
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows = <[[f64; 3]; 3]>::deserialize(deserializer)?;
        let m = Matrix3::from_fn(|r, c| rows[r][c]);
        Rotation::from_matrix(m).map_err(serde::de::Error::custom)
    }
}

/// Camera pose and focal length: `ψ = {f, R, T}`.
///
/// `rotation` and `translation` map world coordinates into the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraParams {
    pub focal: f64,
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl CameraParams {
    pub fn new(focal: f64, rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self {
            focal,
            rotation,
            translation,
        }
    }

    /// Reduced parameter vector `(f, Θ₁, Θ₂, Θ₃, t₁, t₂, t₃)`.
    pub fn to_vector(&self) -> [f64; 7] {
        let theta = self.rotation.axis_angle();
        let t = self.translation;
        [self.focal, theta.x, theta.y, theta.z, t.x, t.y, t.z]
    }

    /// Inverse of [`CameraParams::to_vector`]. Panics if `v.len() != 7`.
    pub fn from_vector(v: &[f64]) -> Self {
        assert_eq!(v.len(), 7, "camera parameter vector must have 7 entries");
        Self {
            focal: v[0],
            rotation: Rotation::from_axis_angle(&Vector3::new(v[1], v[2], v[3])),
            translation: Vector3::new(v[4], v[5], v[6]),
        }
    }

    /// World point expressed in the camera frame.
    pub fn to_camera(&self, p: &Point3) -> Vector3<f64> {
        self.rotation.matrix() * p.coords + self.translation
    }

    /// Camera centre in world coordinates, `-Rᵀ·T`.
    pub fn center(&self) -> Point3 {
        Point3::from(-(self.rotation.matrix().transpose() * self.translation))
    }
}

/// A half-line `origin + t·direction` with `t ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3,
    pub direction: Unit<Vector3<f64>>,
}

impl Ray {
    pub fn at(&self, t: f64) -> Point3 {
        self.origin + self.direction.into_inner() * t
    }

    pub fn distance_to(&self, p: &Point3) -> f64 {
        let v = p - self.origin;
        let along = v.dot(&self.direction);
        (v - self.direction.into_inner() * along).norm()
    }
}

pub fn project(
    p: &Point3,
    params: &CameraParams,
    size: ImageSize,
) -> Result<Point2, GeometryError> {
    let pc = params.to_camera(p);
    let s = pc.z;
    if !(s > 0.0) {
        return Err(GeometryError::PointBehindCamera { depth: s });
    }
    let c = size.principal_point();
    Ok(Point2::new(
        params.focal * pc.x / s + c.x,
        params.focal * pc.y / s + c.y,
    ))
}

/// Normalised image coordinates `(ũ, ṽ) = ((u − w/2)/f, (v − h/2)/f)`.
pub fn normalized(p: &Point2, focal: f64, size: ImageSize) -> (f64, f64) {
    let c = size.principal_point();
    ((p.x - c.x) / focal, (p.y - c.y) / focal)
}

/// The solution set of the two back-projection equations for pixel `p`.
///
/// Every point `X` on the returned ray satisfies
/// `(ũ·[R|T]₃ − [R|T]₁)·[X;1] = 0` and `(ṽ·[R|T]₃ − [R|T]₂)·[X;1] = 0`.
pub fn back_project_ray(p: &Point2, params: &CameraParams, size: ImageSize) -> Ray {
    let (un, vn) = normalized(p, params.focal, size);
    let rt = params.rotation.matrix().transpose();
    Ray {
        origin: params.center(),
        direction: Unit::new_normalize(rt * Vector3::new(un, vn, 1.0)),
    }
}

/// Intersection of a ray's supporting line with the plane `Z = plane_z`.
pub fn intersect_plane(ray: &Ray, plane_z: f64) -> Result<Point3, GeometryError> {
    let (_, mut p) = plane_hit(ray, plane_z)?;
    p.z = plane_z;
    Ok(p)
}

/// Like [`intersect_plane`] but rejects hits behind the ray origin.
pub fn intersect_plane_forward(ray: &Ray, plane_z: f64) -> Result<Point3, GeometryError> {
    let (t, mut p) = plane_hit(ray, plane_z)?;
    if !(t > 0.0) {
        return Err(GeometryError::PointBehindCamera { depth: t });
    }
    p.z = plane_z;
    Ok(p)
}

fn plane_hit(ray: &Ray, plane_z: f64) -> Result<(f64, Point3), GeometryError> {
    let dz = ray.direction.z;
    if dz.abs() < 1e-12 {
        return Err(GeometryError::RayParallelToPlane { plane_z });
    }
    let t = (plane_z - ray.origin.z) / dz;
    Ok((t, ray.at(t)))
}

/// Back-projects a pixel onto the plane `Z = plane_z` in front of the camera.
pub fn pixel_to_plane(
    p: &Point2,
    params: &CameraParams,
    size: ImageSize,
    plane_z: f64,
) -> Result<Point3, GeometryError> {
    intersect_plane_forward(&back_project_ray(p, params, size), plane_z)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula: `R = cosθ·I + (1 − cosθ)·ddᵀ + sinθ·[d]×`.
pub fn axis_angle_to_matrix(theta: &Vector3<f64>) -> Matrix3<f64> {
    let angle = theta.norm();
    if angle == 0.0 {
        return Matrix3::identity();
    }
    let d = theta / angle;
    let (s, c) = angle.sin_cos();
    Matrix3::identity() * c + (d * d.transpose()) * (1.0 - c) + skew(&d) * s
}

/// Validated inverse of Rodrigues' formula, `θ ∈ [0, π]`.
pub fn matrix_to_axis_angle(r: &Matrix3<f64>) -> Result<Vector3<f64>, GeometryError> {
    let rot = Rotation::from_matrix(*r)?;
    Ok(rot.axis_angle())
}

fn rotation_log(r: &Matrix3<f64>) -> Vector3<f64> {
    // tr(R) = 1 + 2cosθ, and the skew part of R is sinθ·[d]×.
    let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let w = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    ) * 0.5;
    let sin = w.norm();
    let angle = sin.atan2(cos);
    if angle == 0.0 {
        return Vector3::zeros();
    }
    if cos > -0.5 {
        // sin θ is well conditioned here.
        if sin < 1e-300 {
            return Vector3::zeros();
        }
        return w * (angle / sin);
    }
    // Near θ = π: (R + Rᵀ)/2 − cosθ·I = (1 − cosθ)·ddᵀ. Take the column with the
    // largest diagonal for the axis, then orient it with the skew part.
    let b = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos;
    let k = (0..3)
        .max_by(|&a, &b_| b[(a, a)].total_cmp(&b[(b_, b_)]))
        .unwrap_or(0);
    let mut d = b.column(k).into_owned();
    d /= d.norm();
    if d.dot(&w) < 0.0 {
        d = -d;
    }
    d * angle
}

/// Closest rotation to `m` in the Frobenius sense (polar decomposition via SVD).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.unwrap_or_else(Matrix3::identity);
    let vt = svd.v_t.unwrap_or_else(Matrix3::identity);
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}
