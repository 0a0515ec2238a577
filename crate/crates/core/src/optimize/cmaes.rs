//! (μ/μ_w, λ)-CMA-ES with rank-one and rank-μ covariance updates and
//! cumulative step-size adaptation.
//!
//! The search runs in coordinates normalised by the caller's per-coordinate
//! scale vector, so `x = x0 + scale ⊙ z` and the initial distribution is
//! `z ~ N(0, sigma0²·I)`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::OptimizeError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmaConfig {
    /// Offspring per generation; `None` uses `4 + ⌊3·ln d⌋`.
    pub population_size: Option<usize>,
    /// Initial step as a fraction of each coordinate's scale.
    pub sigma0: f64,
    pub max_evaluations: usize,
    pub seed: u64,
    /// Stop once the objective spread over recent generations drops below this.
    pub tol_fun: f64,
}

impl Default for CmaConfig {
    fn default() -> Self {
        Self {
            population_size: None,
            sigma0: 0.1,
            max_evaluations: 4_000,
            seed: 0,
            tol_fun: 1e-12,
        }
    }
}

impl CmaConfig {
    pub fn with_budget(max_evaluations: usize, seed: u64) -> Self {
        Self {
            max_evaluations,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), OptimizeError> {
        if matches!(self.population_size, Some(p) if p < 4) {
            return Err(OptimizeError::InvalidConfig(
                "population_size must be at least 4".into(),
            ));
        }
        if !(self.sigma0 > 0.0) {
            return Err(OptimizeError::InvalidConfig(
                "sigma0 must be positive".into(),
            ));
        }
        if self.max_evaluations == 0 {
            return Err(OptimizeError::InvalidConfig(
                "max_evaluations must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Closed interval; use infinities for open sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lower: f64,
    pub upper: f64,
}

impl Bound {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn at_least(lower: f64) -> Self {
        Self::new(lower, f64::INFINITY)
    }

    pub fn free() -> Self {
        Self::new(f64::NEG_INFINITY, f64::INFINITY)
    }

    fn clamp(&self, x: f64) -> f64 {
        x.max(self.lower).min(self.upper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    MaxEvaluations,
    TolFun,
    TolX,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    pub generations: usize,
    pub stop: StopReason,
}

/// Minimises `objective` starting from `x0`.
///
/// Offspring of one generation are evaluated in parallel; sampling and the
/// update stay sequential, so results depend only on the seed.
///
/// The returned point is the best feasible point ever evaluated, so
/// `f ≤ objective(x0)` always holds. Infeasible samples are projected onto the
/// bounds and charged a quadratic penalty proportional to the projection
/// distance.
pub fn cmaes_minimize<F>(
    objective: F,
    x0: &[f64],
    scales: &[f64],
    bounds: Option<&[Bound]>,
    config: &CmaConfig,
) -> Result<CmaResult, OptimizeError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    config.validate()?;
    let n = x0.len();
    if n == 0 || scales.len() != n || bounds.is_some_and(|b| b.len() != n) {
        return Err(OptimizeError::DimensionMismatch);
    }
    if scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(OptimizeError::InvalidConfig(
            "scales must be positive and finite".into(),
        ));
    }

    let to_x =
        |z: &DVector<f64>| -> Vec<f64> { (0..n).map(|i| x0[i] + scales[i] * z[i]).collect() };
    let project = |x: &[f64]| -> (Vec<f64>, f64) {
        match bounds {
            None => (x.to_vec(), 0.0),
            Some(b) => {
                let mut dist = 0.0;
                let clipped: Vec<f64> = x
                    .iter()
                    .zip(b)
                    .zip(scales)
                    .map(|((&xi, bi), si)| {
                        let c = bi.clamp(xi);
                        dist += ((xi - c) / si).powi(2);
                        c
                    })
                    .collect();
                (clipped, dist)
            }
        }
    };

    let (start, _) = project(x0);
    let f0 = objective(&start);
    if !f0.is_finite() {
        return Err(OptimizeError::ObjectiveNonFinite);
    }
    let mut best_x = start;
    let mut best_f = f0;
    let mut evaluations = 1;

    let lambda = config
        .population_size
        .unwrap_or(4 + (3.0 * (n as f64).ln()).floor() as usize);
    let mu = lambda / 2;
    let raw: Vec<f64> = (0..mu)
        .map(|i| (mu as f64 + 0.5).ln() - ((i + 1) as f64).ln())
        .collect();
    let wsum: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / wsum).collect();
    let mueff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    let nf = n as f64;
    let cc = (4.0 + mueff / nf) / (nf + 4.0 + 2.0 * mueff / nf);
    let cs = (mueff + 2.0) / (nf + mueff + 5.0);
    let c1 = 2.0 / ((nf + 1.3).powi(2) + mueff);
    let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nf + 2.0).powi(2) + mueff));
    let damps = 1.0 + 2.0 * (((mueff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + cs;
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut mean = DVector::<f64>::zeros(n);
    let mut sigma = config.sigma0;
    let mut cov = DMatrix::<f64>::identity(n, n);
    let mut basis = DMatrix::<f64>::identity(n, n);
    let mut diag = DVector::<f64>::from_element(n, 1.0);
    let mut ps = DVector::<f64>::zeros(n);
    let mut pc = DVector::<f64>::zeros(n);

    let history_len = 10 + (30.0 * nf / lambda as f64).ceil() as usize;
    let mut best_history: Vec<f64> = Vec::new();
    let mut generation = 0;
    let stop = loop {
        if evaluations + lambda > config.max_evaluations {
            break StopReason::MaxEvaluations;
        }
        generation += 1;

        let candidates: Vec<DVector<f64>> = (0..lambda)
            .map(|_| {
                let z = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                &mean + (&basis * diag.component_mul(&z)) * sigma
            })
            .collect();
        let evaluated: Vec<(Vec<f64>, f64, f64)> = candidates
            .par_iter()
            .map(|c| {
                let (clipped, dist) = project(&to_x(c));
                let fx = objective(&clipped);
                (clipped, if fx.is_nan() { f64::INFINITY } else { fx }, dist)
            })
            .collect();
        evaluations += lambda;
        let mut offspring: Vec<(DVector<f64>, f64)> = Vec::with_capacity(lambda);
        for (candidate, (clipped, fx, dist)) in candidates.into_iter().zip(evaluated) {
            if fx < best_f {
                best_f = fx;
                best_x = clipped;
            }
            let penalised = if dist > 0.0 {
                fx + (fx.abs() + 1.0) * dist
            } else {
                fx
            };
            offspring.push((candidate, penalised));
        }
        offspring.sort_by(|a, b| a.1.total_cmp(&b.1));

        let old_mean = mean.clone();
        mean = offspring
            .iter()
            .take(mu)
            .zip(&weights)
            .fold(DVector::zeros(n), |acc, ((x, _), w)| acc + x * *w);
        let y_w = (&mean - &old_mean) / sigma;

        // C^{-1/2}·y_w = B·D⁻¹·Bᵀ·y_w
        let inv_sqrt = &basis * DMatrix::from_diagonal(&diag.map(|d| 1.0 / d)) * basis.transpose();
        ps = &ps * (1.0 - cs) + (&inv_sqrt * &y_w) * (cs * (2.0 - cs) * mueff).sqrt();
        let ps_norm = ps.norm();
        let hsig = ps_norm / (1.0 - (1.0 - cs).powi(2 * generation as i32)).sqrt() / chi_n
            < 1.4 + 2.0 / (nf + 1.0);
        let hsig_f = if hsig { 1.0 } else { 0.0 };
        pc = &pc * (1.0 - cc) + &y_w * (hsig_f * (cc * (2.0 - cc) * mueff).sqrt());

        let mut rank_mu = DMatrix::<f64>::zeros(n, n);
        for ((x, _), w) in offspring.iter().take(mu).zip(&weights) {
            let d = (x - &old_mean) / sigma;
            rank_mu += &d * d.transpose() * *w;
        }
        cov = &cov * (1.0 - c1 - cmu)
            + (&pc * pc.transpose() + &cov * ((1.0 - hsig_f) * cc * (2.0 - cc))) * c1
            + rank_mu * cmu;
        sigma *= ((cs / damps) * (ps_norm / chi_n - 1.0)).exp();

        cov = (&cov + cov.transpose()) * 0.5;
        let eig = cov.clone().symmetric_eigen();
        if eig
            .eigenvalues
            .iter()
            .any(|v| !(*v > 0.0) || !v.is_finite())
            || !sigma.is_finite()
        {
            break StopReason::TolX;
        }
        basis = eig.eigenvectors;
        diag = eig.eigenvalues.map(f64::sqrt);

        best_history.push(offspring[0].1);
        if best_history.len() > history_len {
            best_history.remove(0);
        }
        let gen_range = offspring[lambda - 1].1 - offspring[0].1;
        let hist_range = best_history
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
            - best_history.iter().cloned().fold(f64::INFINITY, f64::min);
        if generation >= 2 && gen_range.max(hist_range) < config.tol_fun {
            break StopReason::TolFun;
        }
        if sigma * diag.max() < 1e-16 {
            break StopReason::TolX;
        }
    };

    Ok(CmaResult {
        x: best_x,
        f: best_f,
        evaluations,
        generations: generation,
        stop,
    })
}
