//! Speed-density fundamental diagrams (Newell, Greenshields) and flow.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimize::{nls_fit, Bound, CmaConfig, OptimizeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FdError {
    #[error("density {k} outside [0, {k_j}]")]
    DensityOutOfRange { k: f64, k_j: f64 },
    #[error("{points} points are too few to fit the {model:?} model")]
    TooFewPoints { points: usize, model: FdModel },
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdModel {
    Newell,
    Greenshields,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdParams {
    pub model: FdModel,
    /// Free-flow speed, km/h.
    pub v_f_kmh: f64,
    /// Jam density, veh/km/lane.
    pub k_j_veh_per_km: f64,
    /// Slope of the speed-spacing curve (Newell only), km/h·veh/km.
    pub lambda: Option<f64>,
}

impl FdParams {
    pub fn newell(v_f: f64, k_j: f64, lambda: f64) -> Self {
        Self {
            model: FdModel::Newell,
            v_f_kmh: v_f,
            k_j_veh_per_km: k_j,
            lambda: Some(lambda),
        }
    }

    pub fn greenshields(v_f: f64, k_j: f64) -> Self {
        Self {
            model: FdModel::Greenshields,
            v_f_kmh: v_f,
            k_j_veh_per_km: k_j,
            lambda: None,
        }
    }

    pub fn validate(&self) -> Result<(), FdError> {
        if !(self.v_f_kmh > 0.0 && self.k_j_veh_per_km > 0.0) {
            return Err(FdError::InvalidParams(
                "v_f and k_j must be positive".into(),
            ));
        }
        match (self.model, self.lambda) {
            (FdModel::Newell, Some(l)) if l > 0.0 => Ok(()),
            (FdModel::Newell, _) => Err(FdError::InvalidParams(
                "Newell needs a positive lambda".into(),
            )),
            (FdModel::Greenshields, _) => Ok(()),
        }
    }

    /// Speed at density `k`.
    pub fn speed(&self, k: f64) -> Result<f64, FdError> {
        match self.model {
            FdModel::Newell => newell_speed(k, self),
            FdModel::Greenshields => greenshields_speed(k, self),
        }
    }
}

/// Below this density Newell's speed is taken at its limit `v_f`.
const NEWELL_K_MIN: f64 = 1e-6;

fn check_range(k: f64, k_j: f64) -> Result<(), FdError> {
    if (0.0..=k_j).contains(&k) {
        Ok(())
    } else {
        Err(FdError::DensityOutOfRange { k, k_j })
    }
}

/// `v = v_f·(1 − exp(−λ/v_f·(1/k − 1/k_j)))`.
pub fn newell_speed(k: f64, p: &FdParams) -> Result<f64, FdError> {
    let lambda = p
        .lambda
        .ok_or_else(|| FdError::InvalidParams("Newell needs lambda".into()))?;
    check_range(k, p.k_j_veh_per_km)?;
    if k < NEWELL_K_MIN {
        return Ok(p.v_f_kmh);
    }
    let v_f = p.v_f_kmh;
    Ok(v_f * (1.0 - (-lambda / v_f * (1.0 / k - 1.0 / p.k_j_veh_per_km)).exp()))
}

/// `v = v_f·(1 − k/k_j)`.
pub fn greenshields_speed(k: f64, p: &FdParams) -> Result<f64, FdError> {
    check_range(k, p.k_j_veh_per_km)?;
    Ok(p.v_f_kmh * (1.0 - k / p.k_j_veh_per_km))
}

/// `q = k·v` in veh/h/lane.
pub fn flow(k: f64, v: f64) -> f64 {
    k * v
}

/// Density and flow at the peak of `q(k)`.
///
/// Exact for Greenshields; for Newell a grid scan followed by golden-section
/// refinement, relying on `q(k)` being unimodal on `(0, k_j]`.
pub fn max_flow(p: &FdParams) -> Result<(f64, f64), FdError> {
    p.validate()?;
    let k_j = p.k_j_veh_per_km;
    if p.model == FdModel::Greenshields {
        return Ok((k_j / 2.0, p.v_f_kmh * k_j / 4.0));
    }
    let q = |k: f64| flow(k, p.speed(k).unwrap_or(0.0));
    let n = 1000;
    let step = k_j / n as f64;
    let best = (1..=n)
        .max_by(|a, b| q(*a as f64 * step).total_cmp(&q(*b as f64 * step)))
        .unwrap_or(1);
    let (mut lo, mut hi) = (
        ((best - 1) as f64) * step,
        ((best + 1).min(n) as f64) * step,
    );
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if q(a) < q(b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    let k = (lo + hi) / 2.0;
    Ok((k, q(k)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdFit {
    pub params: FdParams,
    /// Sum of squared speed residuals.
    pub sse: f64,
    pub n_points: usize,
}

/// Upper bounds of the fitted parameters.
pub const V_F_MAX: f64 = 200.0;
pub const K_J_MAX: f64 = 1000.0;
pub const LAMBDA_MAX: f64 = 1e5;

/// Ordinary least squares line `v = a + b·k`.
fn linear_fit(data: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = data.len() as f64;
    let (sk, sv) = data
        .iter()
        .fold((0.0, 0.0), |acc, (k, v)| (acc.0 + k, acc.1 + v));
    let (mk, mv) = (sk / n, sv / n);
    let (sxx, sxy) = data.iter().fold((0.0, 0.0), |acc, (k, v)| {
        (acc.0 + (k - mk).powi(2), acc.1 + (k - mk) * (v - mv))
    });
    if sxx == 0.0 {
        return None;
    }
    let b = sxy / sxx;
    Some((mv - b * mk, b))
}

/// Speed as a function of a parameter vector and density.
type SpeedFn = fn(&[f64], f64) -> f64;

/// Least-squares speed fit of `model` to `(k, v)` pairs.
pub fn fit_fd(data: &[(f64, f64)], model: FdModel, config: &CmaConfig) -> Result<FdFit, FdError> {
    let min_points = match model {
        FdModel::Newell => 3,
        FdModel::Greenshields => 2,
    };
    if data.len() < min_points {
        return Err(FdError::TooFewPoints {
            points: data.len(),
            model,
        });
    }
    if let Some((k, v)) = data
        .iter()
        .find(|(k, v)| !(k.is_finite() && *k > 0.0 && v.is_finite()))
    {
        return Err(FdError::InvalidData(format!(
            "point ({k}, {v}) needs finite k > 0 and finite v"
        )));
    }
    let k_max = data.iter().map(|d| d.0).fold(0.0, f64::max);
    if k_max >= K_J_MAX {
        return Err(FdError::InvalidData(format!(
            "density {k_max} exceeds the jam-density bound"
        )));
    }
    let v_max = data.iter().map(|d| d.1).fold(f64::MIN, f64::max);
    let k_j_lo = k_max * (1.0 + 1e-9);
    let clamp = |x: f64, lo: f64, hi: f64| x.max(lo).min(hi);

    let (model_fn, p0, bounds): (SpeedFn, Vec<f64>, Vec<Bound>) = match model {
        FdModel::Greenshields => {
            let (a, b) = linear_fit(data).unwrap_or((v_max, -v_max / (2.0 * k_max)));
            let v_f = if a > 0.0 { a } else { v_max.max(1.0) };
            let k_j = if b < 0.0 { -a / b } else { 2.0 * k_max };
            (
                |p: &[f64], k: f64| p[0] * (1.0 - k / p[1]),
                vec![clamp(v_f, 1e-6, V_F_MAX), clamp(k_j, k_j_lo, K_J_MAX)],
                vec![Bound::new(1e-6, V_F_MAX), Bound::new(k_j_lo, K_J_MAX)],
            )
        }
        FdModel::Newell => {
            let v_f = clamp(v_max * 1.05, 1e-3, V_F_MAX);
            let k_j = clamp(k_max * 1.5, k_j_lo, K_J_MAX);
            // Invert the model at each point for lambda and take the median.
            let mut lams: Vec<f64> = data
                .iter()
                .filter_map(|&(k, v)| {
                    let r = 1.0 - v / v_f;
                    let d = 1.0 / k - 1.0 / k_j;
                    (r > 0.0 && r < 1.0 && d > 0.0).then(|| -v_f * r.ln() / d)
                })
                .collect();
            lams.sort_by(f64::total_cmp);
            let lam = lams.get(lams.len() / 2).copied().unwrap_or(1000.0);
            (
                |p: &[f64], k: f64| {
                    if k < NEWELL_K_MIN {
                        p[0]
                    } else {
                        p[0] * (1.0 - (-p[2] / p[0] * (1.0 / k - 1.0 / p[1])).exp())
                    }
                },
                vec![v_f, k_j, clamp(lam, 1e-6, LAMBDA_MAX)],
                vec![
                    Bound::new(1e-6, V_F_MAX),
                    Bound::new(k_j_lo, K_J_MAX),
                    Bound::new(1e-6, LAMBDA_MAX),
                ],
            )
        }
    };
    let fit = nls_fit(model_fn, data, &p0, Some(&bounds), config)?;
    let p = &fit.params;
    let params = match model {
        FdModel::Greenshields => FdParams::greenshields(p[0], p[1]),
        FdModel::Newell => FdParams::newell(p[0], p[1], p[2]),
    };
    Ok(FdFit {
        params,
        sse: fit.sse,
        n_points: data.len(),
    })
}
