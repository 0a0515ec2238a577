//! Efficient PnP (EPnP) with a fixed, known focal length, plus a RANSAC
//! wrapper for the candidate-generation stage.
//!
//! World points are written as barycentric combinations of four control
//! points (three when the points are planar). The camera-frame control points
//! lie in the null space of a `2n × 3c` system; the null-space combination is
//! found for 1..=4 basis vectors, refined with Gauss-Newton on the control
//! point distances, and the candidate with the lowest reprojection error wins.
//! The winning pose is then polished with Levenberg-Marquardt on the pixel
//! residuals.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    axis_angle_to_matrix, nearest_rotation, ImageSize, Point2, Point3, Rotation,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpError {
    #[error("need at least 4 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("{points3d} world points but {points2d} image points")]
    LengthMismatch { points3d: usize, points2d: usize },
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("no consensus: best sample had {best} inliers")]
    NoConsensus { best: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpSolution {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
    /// Mean reprojection error over the correspondences used, in pixels.
    pub reprojection_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacSolution {
    pub solution: PnpSolution,
    pub inliers: Vec<bool>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub threshold_px: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold_px: 8.0,
            max_iterations: 1000,
            confidence: 0.99,
            sample_size: 4,
            seed: 0,
        }
    }
}

/// Relative spread below which the point cloud is treated as planar.
const PLANAR_RATIO: f64 = 1e-3;
const COLLINEAR_RATIO: f64 = 1e-6;

pub fn epnp(
    points3d: &[Point3],
    points2d: &[Point2],
    focal: f64,
    size: ImageSize,
) -> Result<PnpSolution, PnpError> {
    let sol = epnp_unrefined(points3d, points2d, focal, size)?;
    Ok(refine_pose(points3d, points2d, focal, size, sol))
}

/// EPnP without the final Levenberg-Marquardt polish.
pub fn epnp_unrefined(
    points3d: &[Point3],
    points2d: &[Point2],
    focal: f64,
    size: ImageSize,
) -> Result<PnpSolution, PnpError> {
    let n = points3d.len();
    if n != points2d.len() {
        return Err(PnpError::LengthMismatch {
            points3d: n,
            points2d: points2d.len(),
        });
    }
    if n < 4 {
        return Err(PnpError::TooFewPoints(n));
    }

    let controls = ControlPoints::select(points3d)?;
    let alphas: Vec<Vec<f64>> = points3d.iter().map(|p| controls.barycentric(p)).collect();
    let nc = controls.points.len();

    let pp = size.principal_point();
    let mut m = DMatrix::<f64>::zeros(2 * n, 3 * nc);
    for (i, (a, uv)) in alphas.iter().zip(points2d).enumerate() {
        for (j, &alpha) in a.iter().enumerate() {
            m[(2 * i, 3 * j)] = alpha * focal;
            m[(2 * i, 3 * j + 2)] = alpha * (pp.x - uv.x);
            m[(2 * i + 1, 3 * j + 1)] = alpha * focal;
            m[(2 * i + 1, 3 * j + 2)] = alpha * (pp.y - uv.y);
        }
    }
    let mtm = m.transpose() * &m;
    let eig = mtm.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let kernel: Vec<DVector<f64>> = order
        .iter()
        .take(if nc == 4 { 4 } else { 3 })
        .map(|&k| eig.eigenvectors.column(k).into_owned())
        .collect();

    let pairs: Vec<(usize, usize)> = (0..nc)
        .flat_map(|a| (a + 1..nc).map(move |b| (a, b)))
        .collect();
    let rho: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| (controls.points[a] - controls.points[b]).norm_squared())
        .collect();

    let mut best: Option<PnpSolution> = None;
    for dim in 1..=kernel.len() {
        let basis = &kernel[..dim];
        let diffs = pair_differences(basis, &pairs);
        let Some(init) = initial_betas(&diffs, &rho) else {
            continue;
        };
        let betas = gauss_newton_betas(init, &diffs, &rho);
        let Some(sol) = pose_from_betas(&betas, basis, &alphas, points3d, points2d, focal, size)
        else {
            continue;
        };
        if best
            .as_ref()
            .is_none_or(|b| sol.reprojection_error < b.reprojection_error)
        {
            best = Some(sol);
        }
    }
    best.ok_or(PnpError::DegenerateConfiguration(
        "no valid null-space solution",
    ))
}

struct ControlPoints {
    points: Vec<Vector3<f64>>,
    /// Principal axes scaled by the standard deviation along them.
    axes: Vec<Vector3<f64>>,
}

impl ControlPoints {
    fn select(points: &[Point3]) -> Result<Self, PnpError> {
        let n = points.len() as f64;
        let centroid = points
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords)
            / n;
        let mut cov = Matrix3::zeros();
        for p in points {
            let d = p.coords - centroid;
            cov += d * d.transpose();
        }
        cov /= n;
        let eig = cov.symmetric_eigen();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let lambda: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
        if !(lambda[0] > 1e-24) {
            return Err(PnpError::DegenerateConfiguration("all points coincide"));
        }
        if (lambda[1] / lambda[0]).sqrt() < COLLINEAR_RATIO {
            return Err(PnpError::DegenerateConfiguration("points are collinear"));
        }
        let distinct = count_distinct(points);
        if distinct < 4 && (lambda[2] / lambda[0]).sqrt() >= PLANAR_RATIO {
            return Err(PnpError::DegenerateConfiguration(
                "fewer than 4 distinct points",
            ));
        }
        if distinct < 3 {
            return Err(PnpError::DegenerateConfiguration(
                "fewer than 3 distinct points",
            ));
        }
        let planar = (lambda[2] / lambda[0]).sqrt() < PLANAR_RATIO;
        let used = if planar { 2 } else { 3 };
        let axes: Vec<Vector3<f64>> = order[..used]
            .iter()
            .zip(&lambda)
            .map(|(&k, &l)| eig.eigenvectors.column(k).into_owned() * l.sqrt())
            .collect();
        let mut pts = vec![centroid];
        pts.extend(axes.iter().map(|a| centroid + a));
        Ok(Self { points: pts, axes })
    }

    fn barycentric(&self, p: &Point3) -> Vec<f64> {
        let d = p.coords - self.points[0];
        let mut out = Vec::with_capacity(self.points.len());
        out.push(0.0);
        for a in &self.axes {
            out.push(d.dot(a) / a.norm_squared());
        }
        out[0] = 1.0 - out[1..].iter().sum::<f64>();
        out
    }
}

fn count_distinct(points: &[Point3]) -> usize {
    let mut distinct: Vec<&Point3> = Vec::new();
    for p in points {
        if !distinct.iter().any(|q| (*q - p).norm() < 1e-12) {
            distinct.push(p);
        }
    }
    distinct.len()
}

/// For every control-point pair, the per-basis-vector difference `v_k[a] − v_k[b]`.
fn pair_differences(basis: &[DVector<f64>], pairs: &[(usize, usize)]) -> Vec<Vec<Vector3<f64>>> {
    pairs
        .iter()
        .map(|&(a, b)| {
            basis
                .iter()
                .map(|v| {
                    Vector3::new(
                        v[3 * a] - v[3 * b],
                        v[3 * a + 1] - v[3 * b + 1],
                        v[3 * a + 2] - v[3 * b + 2],
                    )
                })
                .collect()
        })
        .collect()
}

/// Linearised estimate of the betas from the distance constraints
/// `‖Σ_k β_k·dv_k‖² = ρ`.
fn initial_betas(diffs: &[Vec<Vector3<f64>>], rho: &[f64]) -> Option<Vec<f64>> {
    let dim = diffs[0].len();
    if dim == 1 {
        let num: f64 = diffs
            .iter()
            .zip(rho)
            .map(|(d, r)| d[0].norm() * r.sqrt())
            .sum();
        let den: f64 = diffs.iter().map(|d| d[0].norm_squared()).sum();
        return (den > 0.0).then(|| vec![num / den]);
    }
    // Unknowns are products β_k·β_l. Use all of them when the system is
    // overdetermined, otherwise only the first row β_1·β_l.
    let full: Vec<(usize, usize)> = (0..dim)
        .flat_map(|k| (k..dim).map(move |l| (k, l)))
        .collect();
    let products: Vec<(usize, usize)> = if full.len() <= rho.len() {
        full
    } else {
        (0..dim).map(|l| (0, l)).collect()
    };
    let mut l_mat = DMatrix::<f64>::zeros(rho.len(), products.len());
    for (row, d) in diffs.iter().enumerate() {
        for (col, &(k, l)) in products.iter().enumerate() {
            let dot = d[k].dot(&d[l]);
            l_mat[(row, col)] = if k == l { dot } else { 2.0 * dot };
        }
    }
    let x = l_mat
        .svd(true, true)
        .solve(&DVector::from_column_slice(rho), 1e-12)
        .ok()?;
    let b11 = x[0].abs().sqrt();
    if !(b11 > 0.0) {
        return None;
    }
    let mut betas = vec![0.0; dim];
    betas[0] = b11;
    for l in 1..dim {
        let idx = products.iter().position(|&p| p == (0, l))?;
        betas[l] = x[idx] / b11;
    }
    Some(betas)
}

fn gauss_newton_betas(mut betas: Vec<f64>, diffs: &[Vec<Vector3<f64>>], rho: &[f64]) -> Vec<f64> {
    let dim = betas.len();
    let residuals = |b: &[f64]| -> Vec<f64> {
        diffs
            .iter()
            .zip(rho)
            .map(|(d, r)| {
                let v = d
                    .iter()
                    .zip(b)
                    .fold(Vector3::zeros(), |acc, (dv, bk)| acc + dv * *bk);
                v.norm_squared() - r
            })
            .collect()
    };
    let cost = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();
    let mut res = residuals(&betas);
    let mut current = cost(&res);
    for _ in 0..10 {
        let mut jac = DMatrix::<f64>::zeros(diffs.len(), dim);
        for (row, d) in diffs.iter().enumerate() {
            let v = d
                .iter()
                .zip(&betas)
                .fold(Vector3::zeros(), |acc, (dv, bk)| acc + dv * *bk);
            for k in 0..dim {
                jac[(row, k)] = 2.0 * d[k].dot(&v);
            }
        }
        let Some(step) = jac
            .svd(true, true)
            .solve(&DVector::from_vec(res.clone()), 1e-14)
            .ok()
        else {
            break;
        };
        let candidate: Vec<f64> = betas.iter().zip(step.iter()).map(|(b, s)| b - s).collect();
        let cres = residuals(&candidate);
        let ccost = cost(&cres);
        if !(ccost < current) {
            break;
        }
        betas = candidate;
        res = cres;
        current = ccost;
    }
    betas
}

fn pose_from_betas(
    betas: &[f64],
    basis: &[DVector<f64>],
    alphas: &[Vec<f64>],
    points3d: &[Point3],
    points2d: &[Point2],
    focal: f64,
    size: ImageSize,
) -> Option<PnpSolution> {
    let nc = basis[0].len() / 3;
    let flat = basis
        .iter()
        .zip(betas)
        .fold(DVector::<f64>::zeros(3 * nc), |acc, (v, b)| acc + v * *b);
    let controls: Vec<Vector3<f64>> = (0..nc)
        .map(|j| Vector3::new(flat[3 * j], flat[3 * j + 1], flat[3 * j + 2]))
        .collect();
    let mut camera_points: Vec<Vector3<f64>> = alphas
        .iter()
        .map(|a| {
            a.iter()
                .zip(&controls)
                .fold(Vector3::zeros(), |acc, (al, c)| acc + c * *al)
        })
        .collect();
    let mean_depth: f64 =
        camera_points.iter().map(|p| p.z).sum::<f64>() / camera_points.len() as f64;
    if mean_depth < 0.0 {
        camera_points.iter_mut().for_each(|p| *p = -*p);
    }
    let (rotation, translation) = absolute_orientation(points3d, &camera_points)?;
    let reprojection_error =
        mean_reprojection_error(points3d, points2d, &rotation, &translation, focal, size);
    reprojection_error.is_finite().then_some(PnpSolution {
        rotation: Rotation::from_matrix(rotation).ok()?,
        translation,
        reprojection_error,
    })
}

/// Rigid transform (no scale) taking `world` onto `camera` in the least-squares sense.
fn absolute_orientation(
    world: &[Point3],
    camera: &[Vector3<f64>],
) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    let n = world.len() as f64;
    let cw = world.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
    let cc = camera.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n;
    let mut h = Matrix3::zeros();
    for (w, c) in world.iter().zip(camera) {
        h += (c - cc) * (w.coords - cw).transpose();
    }
    if !h.iter().all(|x| x.is_finite()) {
        return None;
    }
    let r = nearest_rotation(&h);
    Some((r, cc - r * cw))
}

pub fn reprojection_errors(
    points3d: &[Point3],
    points2d: &[Point2],
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
    focal: f64,
    size: ImageSize,
) -> Vec<f64> {
    let pp = size.principal_point();
    points3d
        .iter()
        .zip(points2d)
        .map(|(p, uv)| {
            let c = rotation * p.coords + translation;
            if !(c.z > 0.0) {
                return f64::INFINITY;
            }
            let u = focal * c.x / c.z + pp.x;
            let v = focal * c.y / c.z + pp.y;
            ((u - uv.x).powi(2) + (v - uv.y).powi(2)).sqrt()
        })
        .collect()
}

fn mean_reprojection_error(
    points3d: &[Point3],
    points2d: &[Point2],
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
    focal: f64,
    size: ImageSize,
) -> f64 {
    let e = reprojection_errors(points3d, points2d, rotation, translation, focal, size);
    e.iter().sum::<f64>() / e.len() as f64
}

/// Levenberg-Marquardt on the pixel residuals, perturbing the rotation on
/// the left (`R ← exp(δω)·R`). Returns the input when no step improves it.
pub fn refine_pose(
    points3d: &[Point3],
    points2d: &[Point2],
    focal: f64,
    size: ImageSize,
    initial: PnpSolution,
) -> PnpSolution {
    let pp = size.principal_point();
    let n = points3d.len();
    let cost_of = |r: &Matrix3<f64>, t: &Vector3<f64>| -> f64 {
        let mut total = 0.0;
        for (p, uv) in points3d.iter().zip(points2d) {
            let c = r * p.coords + t;
            if !(c.z > 0.0) {
                return f64::INFINITY;
            }
            total += (focal * c.x / c.z + pp.x - uv.x).powi(2)
                + (focal * c.y / c.z + pp.y - uv.y).powi(2);
        }
        total
    };
    let mut r = *initial.rotation.matrix();
    let mut t = initial.translation;
    let mut cost = cost_of(&r, &t);
    if !cost.is_finite() {
        return initial;
    }
    let mut mu = 1e-3;
    for _ in 0..50 {
        let mut jac = DMatrix::<f64>::zeros(2 * n, 6);
        let mut res = DVector::<f64>::zeros(2 * n);
        for (i, (p, uv)) in points3d.iter().zip(points2d).enumerate() {
            let rp = r * p.coords;
            let c = rp + t;
            let iz = 1.0 / c.z;
            res[2 * i] = focal * c.x * iz + pp.x - uv.x;
            res[2 * i + 1] = focal * c.y * iz + pp.y - uv.y;
            let du = Vector3::new(focal * iz, 0.0, -focal * c.x * iz * iz);
            let dv = Vector3::new(0.0, focal * iz, -focal * c.y * iz * iz);
            // ∂c/∂δω = −[R·X]×, ∂c/∂δt = I
            let dw = -crate::geometry::skew(&rp);
            let du_w = dw.transpose() * du;
            let dv_w = dw.transpose() * dv;
            for k in 0..3 {
                jac[(2 * i, k)] = du_w[k];
                jac[(2 * i + 1, k)] = dv_w[k];
                jac[(2 * i, 3 + k)] = du[k];
                jac[(2 * i + 1, 3 + k)] = dv[k];
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &res;
        let mut improved = false;
        for _ in 0..10 {
            let mut a = jtj.clone();
            for k in 0..6 {
                a[(k, k)] += mu * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&jtr))) else {
                mu *= 10.0;
                continue;
            };
            let dw = Vector3::new(step[0], step[1], step[2]);
            let dt = Vector3::new(step[3], step[4], step[5]);
            let r_new = nearest_rotation(&(axis_angle_to_matrix(&dw) * r));
            let t_new = t + dt;
            let c_new = cost_of(&r_new, &t_new);
            if c_new < cost {
                let converged = (cost - c_new) <= 1e-15 * cost.max(1e-300) || step.norm() < 1e-15;
                r = r_new;
                t = t_new;
                cost = c_new;
                mu = (mu / 10.0).max(1e-12);
                improved = !converged;
                break;
            }
            mu *= 10.0;
        }
        if !improved || cost < 1e-24 {
            break;
        }
    }
    let reprojection_error = mean_reprojection_error(points3d, points2d, &r, &t, focal, size);
    if reprojection_error <= initial.reprojection_error {
        match Rotation::from_matrix(r) {
            Ok(rotation) => PnpSolution {
                rotation,
                translation: t,
                reprojection_error,
            },
            Err(_) => initial,
        }
    } else {
        initial
    }
}

/// EPnP inside a RANSAC loop. Deterministic for a fixed `config.seed`.
pub fn epnp_ransac(
    points3d: &[Point3],
    points2d: &[Point2],
    focal: f64,
    size: ImageSize,
    config: &RansacConfig,
) -> Result<RansacSolution, PnpError> {
    let n = points3d.len();
    if n != points2d.len() {
        return Err(PnpError::LengthMismatch {
            points3d: n,
            points2d: points2d.len(),
        });
    }
    let sample_size = config.sample_size.max(4);
    if n < sample_size {
        return Err(PnpError::TooFewPoints(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // (inlier count, mean inlier error, mask)
    let mut best: Option<(usize, f64, Vec<bool>)> = None;
    let mut required = config.max_iterations;
    let mut iterations = 0;
    while iterations < required.min(config.max_iterations) {
        iterations += 1;
        let idx = sample(&mut rng, n, sample_size).into_vec();
        let p3: Vec<Point3> = idx.iter().map(|&i| points3d[i]).collect();
        let p2: Vec<Point2> = idx.iter().map(|&i| points2d[i]).collect();
        let Ok(sol) = epnp(&p3, &p2, focal, size) else {
            continue;
        };
        let errors = reprojection_errors(
            points3d,
            points2d,
            sol.rotation.matrix(),
            &sol.translation,
            focal,
            size,
        );
        let mask: Vec<bool> = errors.iter().map(|&e| e <= config.threshold_px).collect();
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            continue;
        }
        let mean = errors
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(e, _)| e)
            .sum::<f64>()
            / count as f64;
        let better = match &best {
            None => true,
            Some((bc, be, _)) => count > *bc || (count == *bc && mean < *be),
        };
        if better {
            best = Some((count, mean, mask));
            let w = count as f64 / n as f64;
            let p_all = w.powi(sample_size as i32);
            required = if p_all >= 1.0 - 1e-12 {
                iterations
            } else {
                let k = (1.0 - config.confidence).ln() / (1.0 - p_all).ln();
                if k.is_finite() {
                    k.ceil() as usize
                } else {
                    config.max_iterations
                }
            };
        }
    }
    let (count, _, mask) = best.unwrap_or((0, f64::INFINITY, vec![false; n]));
    if count < 4 {
        return Err(PnpError::NoConsensus { best: count });
    }
    let p3: Vec<Point3> = points3d
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|(p, _)| *p)
        .collect();
    let p2: Vec<Point2> = points2d
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|(p, _)| *p)
        .collect();
    let solution = epnp(&p3, &p2, focal, size)?;
    Ok(RansacSolution {
        solution,
        inliers: mask,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, CameraParams};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn size() -> ImageSize {
        ImageSize::new(320.0, 240.0)
    }

    fn box_points() -> Vec<Point3> {
        vec![
            Point3::new(-0.8, 2.2, 0.7),
            Point3::new(0.8, 2.2, 0.7),
            Point3::new(0.0, 2.3, 0.45),
            Point3::new(0.0, 0.9, 0.95),
            Point3::new(-0.95, 0.5, 1.0),
            Point3::new(0.95, 0.5, 1.0),
            Point3::new(-0.85, -2.25, 0.9),
            Point3::new(0.85, -2.25, 0.9),
        ]
    }

    fn camera() -> CameraParams {
        CameraParams::new(
            350.0,
            Rotation::from_axis_angle(&Vector3::new(-1.9, 0.15, 0.2)),
            Vector3::new(0.4, -0.3, 18.0),
        )
    }

    fn observe(points: &[Point3], cam: &CameraParams) -> Vec<Point2> {
        points
            .iter()
            .map(|p| project(p, cam, size()).unwrap())
            .collect()
    }

    #[test]
    fn noise_free_pose_reprojects_exactly() {
        let cam = camera();
        let pts = box_points();
        let obs = observe(&pts, &cam);
        let sol = epnp(&pts, &obs, cam.focal, size()).unwrap();
        assert!(
            sol.reprojection_error < 1e-6,
            "error {}",
            sol.reprojection_error
        );
        assert!((sol.translation - cam.translation).norm() < 1e-6);
    }

    #[test]
    fn noisy_pose_stays_within_noise_scale() {
        let cam = camera();
        let pts = box_points();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let obs: Vec<Point2> = observe(&pts, &cam)
            .into_iter()
            .map(|p| Point2::new(p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng)))
            .collect();
        let sol = epnp(&pts, &obs, cam.focal, size()).unwrap();
        assert!(sol.reprojection_error < 2.0);
    }

    #[test]
    fn identity_pose_recovers_depth() {
        let cam = CameraParams::new(350.0, Rotation::identity(), Vector3::new(0.0, 0.0, 12.0));
        let pts = vec![
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(-1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, -1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
            Point3::new(0.0, 0.0, -1.0),
        ];
        let obs = observe(&pts, &cam);
        let sol = epnp(&pts, &obs, cam.focal, size()).unwrap();
        assert!((sol.translation - Vector3::new(0.0, 0.0, 12.0)).norm() < 1e-6);
        assert!((sol.rotation.matrix() - Matrix3::identity()).abs().max() < 1e-9);
    }

    #[test]
    fn planar_points_use_planar_branch() {
        let cam = camera();
        let pts: Vec<Point3> = (0..8)
            .map(|i| Point3::new((i % 4) as f64 * 0.7 - 1.0, (i / 4) as f64 * 1.5 - 0.7, 0.0))
            .collect();
        let obs = observe(&pts, &cam);
        let sol = epnp(&pts, &obs, cam.focal, size()).unwrap();
        assert!(
            sol.reprojection_error < 1e-6,
            "error {}",
            sol.reprojection_error
        );
    }

    #[test]
    fn errors_on_bad_input() {
        let pts = box_points();
        let obs = observe(&pts, &camera());
        assert_eq!(
            epnp(&pts[..3], &obs[..3], 350.0, size()),
            Err(PnpError::TooFewPoints(3))
        );
        let line: Vec<Point3> = (0..6).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(
            epnp(&line, &obs[..6], 350.0, size()),
            Err(PnpError::DegenerateConfiguration(_))
        ));
        assert!(matches!(
            epnp(&pts, &obs[..5], 350.0, size()),
            Err(PnpError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn ransac_clean_matches_direct_solve() {
        let cam = camera();
        let pts = box_points();
        let obs = observe(&pts, &cam);
        let r = epnp_ransac(&pts, &obs, cam.focal, size(), &RansacConfig::default()).unwrap();
        assert!(r.inliers.iter().all(|&m| m));
        let direct = epnp(&pts, &obs, cam.focal, size()).unwrap();
        assert!((r.solution.translation - direct.translation).norm() < 1e-6);
    }

    #[test]
    fn ransac_drops_single_outlier() {
        let cam = camera();
        let pts = box_points();
        let mut obs = observe(&pts, &cam);
        obs[3].x += 50.0;
        let r = epnp_ransac(&pts, &obs, cam.focal, size(), &RansacConfig::default()).unwrap();
        assert!(!r.inliers[3]);
        assert_eq!(r.inliers.iter().filter(|&&m| m).count(), 7);
        assert!(r.solution.reprojection_error < 1e-6);
    }

    #[test]
    fn ransac_without_consensus_fails() {
        let pts = box_points();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let obs: Vec<Point2> = (0..pts.len())
            .map(|_| Point2::new(rng.random_range(0.0..320.0), rng.random_range(0.0..240.0)))
            .collect();
        let cfg = RansacConfig {
            threshold_px: 0.5,
            ..RansacConfig::default()
        };
        assert!(matches!(
            epnp_ransac(&pts, &obs, 350.0, size(), &cfg),
            Err(PnpError::NoConsensus { .. })
        ));
    }

    #[test]
    fn ransac_is_deterministic() {
        let cam = camera();
        let pts = box_points();
        let mut obs = observe(&pts, &cam);
        obs[1].y -= 30.0;
        let a = epnp_ransac(&pts, &obs, cam.focal, size(), &RansacConfig::default()).unwrap();
        let b = epnp_ransac(&pts, &obs, cam.focal, size(), &RansacConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
