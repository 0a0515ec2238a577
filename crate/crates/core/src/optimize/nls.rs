//! Bounded nonlinear least squares on top of CMA-ES.

use super::cmaes::{cmaes_minimize, Bound, CmaConfig, StopReason};
use super::OptimizeError;

#[derive(Debug, Clone, PartialEq)]
pub struct NlsFit {
    pub params: Vec<f64>,
    /// Sum of squared residuals at `params`.
    pub sse: f64,
    pub evaluations: usize,
    pub stop: StopReason,
}

/// Sum of squared residuals of `model` over `data`.
pub fn sum_squared_residuals<M>(model: &M, params: &[f64], data: &[(f64, f64)]) -> f64
where
    M: Fn(&[f64], f64) -> f64,
{
    data.iter()
        .map(|&(x, y)| (model(params, x) - y).powi(2))
        .sum()
}

/// Fits `model(params, x) ≈ y` starting at `p0`.
///
/// Per-coordinate search scales come from `p0` (or the bound width when that
/// is finite and smaller), so parameters of very different magnitude are
/// explored evenly.
pub fn nls_fit<M>(
    model: M,
    data: &[(f64, f64)],
    p0: &[f64],
    bounds: Option<&[Bound]>,
    config: &CmaConfig,
) -> Result<NlsFit, OptimizeError>
where
    M: Fn(&[f64], f64) -> f64 + Sync,
{
    if data.len() < p0.len() {
        return Err(OptimizeError::TooFewPoints {
            points: data.len(),
            params: p0.len(),
        });
    }
    let scales: Vec<f64> = p0
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut s = p.abs().max(1.0);
            if let Some(b) = bounds {
                let width = b[i].upper - b[i].lower;
                if width.is_finite() && width > 0.0 {
                    s = s.min(width);
                }
            }
            s
        })
        .collect();
    let objective = |p: &[f64]| sum_squared_residuals(&model, p, data);
    let r = cmaes_minimize(objective, p0, &scales, bounds, config)?;
    Ok(NlsFit {
        params: r.x,
        sse: r.f,
        evaluations: r.evaluations,
        stop: r.stop,
    })
}
