//! Balanced multi-source dataset allocation as a linear program.
//!
//! Picks `q[μ][ν]` images of scenario `ν` from dataset `μ` to maximise the
//! total, subject to per-scenario dataset shares within `(1 ± β)` of equal
//! and per-scenario totals within `(1 ± γ)/v` of the grand total.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimize::{lp_solve, LinearProgram, OptimizeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MixerError {
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("tolerance {name} = {value} must lie in [0, 1)")]
    InvalidTolerance { name: &'static str, value: f64 },
    #[error("allocation is {got:?} but manifest is {want:?} (datasets × scenarios)")]
    ShapeMismatch {
        got: (usize, usize),
        want: (usize, usize),
    },
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub name: String,
    /// Images available per scenario; missing scenarios count as zero.
    pub counts: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub scenarios: Vec<String>,
    pub datasets: Vec<DatasetEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<(), MixerError> {
        if self.scenarios.is_empty() || self.datasets.is_empty() {
            return Err(MixerError::InvalidManifest(
                "need at least one dataset and one scenario".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(s) = self.scenarios.iter().find(|s| !seen.insert(*s)) {
            return Err(MixerError::InvalidManifest(format!(
                "duplicate scenario {s:?}"
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for d in &self.datasets {
            if !seen.insert(&d.name) {
                return Err(MixerError::InvalidManifest(format!(
                    "duplicate dataset {:?}",
                    d.name
                )));
            }
            if let Some(s) = d.counts.keys().find(|s| !self.scenarios.contains(s)) {
                return Err(MixerError::InvalidManifest(format!(
                    "dataset {:?} lists unknown scenario {s:?}",
                    d.name
                )));
            }
        }
        Ok(())
    }

    /// Builds a manifest from a capacity matrix indexed `[dataset][scenario]`.
    pub fn from_matrix(datasets: &[&str], scenarios: &[&str], q: &[Vec<u64>]) -> Self {
        Self {
            scenarios: scenarios.iter().map(|s| s.to_string()).collect(),
            datasets: datasets
                .iter()
                .zip(q)
                .map(|(name, row)| DatasetEntry {
                    name: name.to_string(),
                    counts: scenarios
                        .iter()
                        .map(|s| s.to_string())
                        .zip(row.iter().copied())
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.datasets.len(), self.scenarios.len())
    }

    /// Capacity matrix `[dataset][scenario]`.
    pub fn capacities(&self) -> Vec<Vec<u64>> {
        self.datasets
            .iter()
            .map(|d| {
                self.scenarios
                    .iter()
                    .map(|s| d.counts.get(s).copied().unwrap_or(0))
                    .collect()
            })
            .collect()
    }
}

fn check_tolerance(name: &'static str, value: f64) -> Result<(), MixerError> {
    if (0.0..1.0).contains(&value) {
        Ok(())
    } else {
        Err(MixerError::InvalidTolerance { name, value })
    }
}

/// The allocation LP. Variable `μ·v + ν` is `q[μ][ν]`.
///
/// Rows: two share constraints per nonzero-capacity cell, then two scenario
/// band constraints per scenario. Capacities enter as variable bounds.
pub fn build_lp(
    manifest: &DatasetManifest,
    beta: f64,
    gamma: f64,
) -> Result<LinearProgram, MixerError> {
    manifest.validate()?;
    check_tolerance("beta", beta)?;
    check_tolerance("gamma", gamma)?;
    let cap = manifest.capacities();
    let (u, v) = manifest.shape();
    let idx = |m: usize, s: usize| m * v + s;
    let mut a_ub = Vec::new();
    for s in 0..v {
        let active: Vec<usize> = (0..u).filter(|&m| cap[m][s] > 0).collect();
        let d = active.len() as f64;
        for &m in &active {
            let mut upper = vec![0.0; u * v];
            let mut lower = vec![0.0; u * v];
            for mm in 0..u {
                upper[idx(mm, s)] -= (1.0 + beta) / d;
                lower[idx(mm, s)] += (1.0 - beta) / d;
            }
            upper[idx(m, s)] += 1.0;
            lower[idx(m, s)] -= 1.0;
            a_ub.push(upper);
            a_ub.push(lower);
        }
    }
    for s in 0..v {
        let mut upper = vec![-(1.0 + gamma) / v as f64; u * v];
        let mut lower = vec![(1.0 - gamma) / v as f64; u * v];
        for m in 0..u {
            upper[idx(m, s)] += 1.0;
            lower[idx(m, s)] -= 1.0;
        }
        a_ub.push(upper);
        a_ub.push(lower);
    }
    let b_ub = vec![0.0; a_ub.len()];
    Ok(LinearProgram {
        objective: vec![1.0; u * v],
        a_ub,
        b_ub,
        bounds: cap
            .iter()
            .flatten()
            .map(|&c| (0.0, Some(c as f64)))
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub datasets: Vec<String>,
    pub scenarios: Vec<String>,
    /// Continuous optimum `[dataset][scenario]`.
    pub q: Vec<Vec<f64>>,
    /// Integer image counts `[dataset][scenario]`.
    pub counts: Vec<Vec<u64>>,
    pub objective: f64,
    pub total_count: u64,
    pub beta: f64,
    pub gamma: f64,
}

/// Floors the continuous solution, then hands the remaining images (the
/// rounded continuous total minus the floored total) to the cells with the
/// largest fractional parts that still have capacity.
fn round_allocation(q: &[Vec<f64>], cap: &[Vec<u64>]) -> Vec<Vec<u64>> {
    let mut counts: Vec<Vec<u64>> = q
        .iter()
        .zip(cap)
        .map(|(row, crow)| {
            row.iter()
                .zip(crow)
                .map(|(x, c)| ((x + 1e-9).floor().max(0.0) as u64).min(*c))
                .collect()
        })
        .collect();
    let total: f64 = q.iter().flatten().sum();
    let floored: u64 = counts.iter().flatten().sum();
    let mut deficit = ((total + 1e-9).round() as u64).saturating_sub(floored);
    let mut cells: Vec<(usize, usize, f64)> = Vec::new();
    for (m, row) in q.iter().enumerate() {
        for (s, x) in row.iter().enumerate() {
            cells.push((m, s, x - counts[m][s] as f64));
        }
    }
    cells.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    for (m, s, frac) in cells {
        if deficit == 0 {
            break;
        }
        if frac > 0.0 && counts[m][s] < cap[m][s] {
            counts[m][s] += 1;
            deficit -= 1;
        }
    }
    counts
}

pub fn solve_allocation(
    manifest: &DatasetManifest,
    beta: f64,
    gamma: f64,
) -> Result<Allocation, MixerError> {
    let lp = build_lp(manifest, beta, gamma)?;
    let (u, v) = manifest.shape();
    // q = 0 is always feasible and the bounds keep the problem bounded.
    let sol = lp_solve(&lp)?;
    let q: Vec<Vec<f64>> = (0..u)
        .map(|m| (0..v).map(|s| sol.x[m * v + s].max(0.0)).collect())
        .collect();
    let counts = round_allocation(&q, &manifest.capacities());
    Ok(Allocation {
        datasets: manifest.datasets.iter().map(|d| d.name.clone()).collect(),
        scenarios: manifest.scenarios.clone(),
        total_count: counts.iter().flatten().sum(),
        q,
        counts,
        objective: sol.objective,
        beta,
        gamma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    ShareUpper,
    ShareLower,
    ScenarioUpper,
    ScenarioLower,
    Capacity,
    NonNegative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSlack {
    pub kind: ConstraintKind,
    pub dataset: Option<String>,
    pub scenario: String,
    /// Nonnegative when satisfied; in images.
    pub slack: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub constraints: Vec<ConstraintSlack>,
    pub violations: usize,
}

/// Slack of every constraint at the allocation `q[dataset][scenario]`.
///
/// Each slack is computed as a single difference of products of the inputs,
/// so with dyadic tolerances such as 0.25 and integer counts the result is
/// exact in binary floating point.
pub fn verify_allocation(
    q: &[Vec<f64>],
    manifest: &DatasetManifest,
    beta: f64,
    gamma: f64,
    tolerance: f64,
) -> Result<VerifyReport, MixerError> {
    manifest.validate()?;
    check_tolerance("beta", beta)?;
    check_tolerance("gamma", gamma)?;
    let (u, v) = manifest.shape();
    let got = (q.len(), q.first().map_or(0, |r| r.len()));
    if got != (u, v) || q.iter().any(|r| r.len() != v) {
        return Err(MixerError::ShapeMismatch { got, want: (u, v) });
    }
    let cap = manifest.capacities();
    let total: f64 = q.iter().flatten().sum();
    let mut constraints = Vec::new();
    let mut push = |kind, dataset: Option<usize>, s: usize, slack: f64| {
        constraints.push(ConstraintSlack {
            kind,
            dataset: dataset.map(|m| manifest.datasets[m].name.clone()),
            scenario: manifest.scenarios[s].clone(),
            slack,
            violated: slack < -tolerance,
        })
    };
    for s in 0..v {
        let scenario_sum: f64 = (0..u).map(|m| q[m][s]).sum();
        let active: Vec<usize> = (0..u).filter(|&m| cap[m][s] > 0).collect();
        let d = active.len() as f64;
        for &m in &active {
            push(
                ConstraintKind::ShareUpper,
                Some(m),
                s,
                ((1.0 + beta) * scenario_sum - d * q[m][s]) / d,
            );
            push(
                ConstraintKind::ShareLower,
                Some(m),
                s,
                (d * q[m][s] - (1.0 - beta) * scenario_sum) / d,
            );
        }
        let vf = v as f64;
        push(
            ConstraintKind::ScenarioUpper,
            None,
            s,
            ((1.0 + gamma) * total - vf * scenario_sum) / vf,
        );
        push(
            ConstraintKind::ScenarioLower,
            None,
            s,
            (vf * scenario_sum - (1.0 - gamma) * total) / vf,
        );
        for m in 0..u {
            push(
                ConstraintKind::Capacity,
                Some(m),
                s,
                cap[m][s] as f64 - q[m][s],
            );
            push(ConstraintKind::NonNegative, Some(m), s, q[m][s]);
        }
    }
    let violations = constraints.iter().filter(|c| c.violated).count();
    Ok(VerifyReport {
        constraints,
        violations,
    })
}

/// The published six-dataset, day/night allocation of 76,898 images.
pub fn published_allocation() -> (DatasetManifest, Vec<Vec<u64>>) {
    let names = [
        "BDD100K",
        "BITVehicle",
        "CityCam",
        "COCO",
        "MIO-TCD-L",
        "UA-DETRAC",
    ];
    let q = vec![
        vec![8_319, 8_398],
        vec![7_325, 0],
        vec![8_459, 0],
        vec![7_111, 7_619],
        vec![8_892, 7_413],
        vec![7_955, 5_407],
    ];
    (
        DatasetManifest::from_matrix(&names, &["daytime", "nighttime"], &q),
        q,
    )
}
