use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraParams, ImageSize, Point3};
use crate::optimize::{cmaes_minimize, Bound, CmaConfig};
use crate::pnp::{epnp, epnp_ransac, PnpError, RansacConfig};

use super::loss::{anchor_weight, back_project_points, centroid, fine_tune_loss, projection_loss};
use super::{derive_seed, CalibConfig, CalibError, VehicleAnnotation, VehicleModel};

const MIN_POSE_KEYPOINTS: usize = 4;
const MIN_PAIR_KEYPOINTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub vehicle_index: usize,
    pub model_index: usize,
    pub params: CameraParams,
    /// Mean reprojection error of the EPnP pose over all keypoints, px.
    pub reprojection_error: f64,
    pub inliers: usize,
    /// RANSAC found no consensus and the pose was fitted to all keypoints.
    pub ransac_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub vehicle_index: usize,
    pub model_index: Option<usize>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    pub skipped: Vec<SkippedPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleMatch {
    pub vehicle_index: usize,
    pub model_index: usize,
    pub model_name: String,
    pub params: CameraParams,
    /// Projection loss of the candidate pose.
    pub candidate_loss: f64,
    /// Projection loss after refinement.
    pub refined_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageLosses {
    pub stage1: f64,
    pub stage2: f64,
    pub stage3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorRun {
    pub anchor_index: usize,
    pub params: CameraParams,
    pub losses: StageLosses,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibResult {
    pub params: CameraParams,
    pub anchor_index: usize,
    pub anchor_model: String,
    pub final_loss: f64,
    /// Fine-tuning loss of the selected anchor at its stage 1, 2 and 3 camera.
    pub stage_losses: StageLosses,
    pub matches: Vec<VehicleMatch>,
    pub anchors: Vec<AnchorRun>,
    pub alpha: f64,
    pub tau: f64,
    pub focal_default: f64,
    pub warnings: Vec<String>,
}

fn sorted(annotations: &[VehicleAnnotation]) -> Result<Vec<&VehicleAnnotation>, CalibError> {
    let mut out: Vec<&VehicleAnnotation> = annotations.iter().collect();
    out.sort_by_key(|a| a.vehicle_index);
    for w in out.windows(2) {
        if w[0].vehicle_index == w[1].vehicle_index {
            return Err(CalibError::InvalidAnnotation {
                vehicle_index: w[0].vehicle_index,
                reason: "duplicate vehicle index".into(),
            });
        }
    }
    for a in &out {
        a.validate()?;
    }
    Ok(out)
}

fn validate_models(models: &[VehicleModel]) -> Result<(), CalibError> {
    if models.is_empty() {
        return Err(CalibError::EmptyModelLibrary);
    }
    models.iter().try_for_each(VehicleModel::validate)
}

/// EPnP pose for every vehicle with at least four keypoints against every
/// model, at the fixed focal length `focal`.
pub fn candidate_generation(
    annotations: &[VehicleAnnotation],
    models: &[VehicleModel],
    focal: f64,
    size: ImageSize,
    ransac: &RansacConfig,
    seed: u64,
) -> Result<CandidateSet, CalibError> {
    validate_models(models)?;
    let vehicles = sorted(annotations)?;
    let mut set = CandidateSet::default();
    let mut pairs = Vec::new();
    for a in &vehicles {
        if a.keypoints.len() < MIN_POSE_KEYPOINTS {
            set.skipped.push(SkippedPair {
                vehicle_index: a.vehicle_index,
                model_index: None,
                reason: format!("{} keypoints, need {MIN_POSE_KEYPOINTS}", a.keypoints.len()),
            });
        } else {
            pairs.extend((0..models.len()).map(|j| (*a, j)));
        }
    }
    if pairs.is_empty() {
        return Err(CalibError::NoFeasibleVehicle);
    }

    let results: Vec<Result<Candidate, SkippedPair>> = pairs
        .par_iter()
        .map(|&(a, j)| {
            let (p3, p2) = a.correspondences(&models[j]);
            let cfg = RansacConfig {
                seed: derive_seed(seed, &[1, a.vehicle_index as u64, j as u64]),
                ..*ransac
            };
            let skipped = |e: PnpError| SkippedPair {
                vehicle_index: a.vehicle_index,
                model_index: Some(j),
                reason: e.to_string(),
            };
            let (sol, inliers, fallback) = match epnp_ransac(&p3, &p2, focal, size, &cfg) {
                Ok(r) => {
                    let n = r.inliers.iter().filter(|b| **b).count();
                    (r.solution, n, false)
                }
                Err(PnpError::NoConsensus { .. }) => {
                    // With a wrong focal length no sample may agree to within
                    // the pixel threshold; fall back to using every keypoint.
                    (
                        epnp(&p3, &p2, focal, size).map_err(skipped)?,
                        p3.len(),
                        true,
                    )
                }
                Err(e) => return Err(skipped(e)),
            };
            let params = CameraParams::new(focal, sol.rotation, sol.translation);
            let errs = crate::pnp::reprojection_errors(
                &p3,
                &p2,
                sol.rotation.matrix(),
                &sol.translation,
                focal,
                size,
            );
            Ok(Candidate {
                vehicle_index: a.vehicle_index,
                model_index: j,
                params,
                reprojection_error: errs.iter().sum::<f64>() / errs.len() as f64,
                inliers,
                ransac_fallback: fallback,
            })
        })
        .collect();
    for r in results {
        match r {
            Ok(c) => set.candidates.push(c),
            Err(s) => set.skipped.push(s),
        }
    }
    set.skipped
        .sort_by_key(|s| (s.vehicle_index, s.model_index));
    Ok(set)
}

fn stage2_scales(params: &CameraParams) -> [f64; 7] {
    let t = params.translation.norm().max(1.0);
    [params.focal.abs().max(1.0), 1.0, 1.0, 1.0, t, t, t]
}

fn focal_bounds() -> [Bound; 7] {
    let mut b = [Bound::free(); 7];
    b[0] = Bound::at_least(1.0);
    b
}

/// Refines every candidate with the focal length free and keeps, per
/// vehicle, the model with the lowest projection loss.
pub fn model_matching(
    candidates: &CandidateSet,
    annotations: &[VehicleAnnotation],
    models: &[VehicleModel],
    size: ImageSize,
    cma: &CmaConfig,
    seed: u64,
) -> Result<Vec<VehicleMatch>, CalibError> {
    let vehicles = sorted(annotations)?;
    let find = |i: usize| vehicles.iter().find(|a| a.vehicle_index == i).copied();
    let bounds = focal_bounds();
    let refined: Vec<Result<VehicleMatch, CalibError>> = candidates
        .candidates
        .par_iter()
        .map(|c| {
            let ann = find(c.vehicle_index).ok_or_else(|| CalibError::InvalidAnnotation {
                vehicle_index: c.vehicle_index,
                reason: "candidate without annotation".into(),
            })?;
            let model = &models[c.model_index];
            let cfg = CmaConfig {
                seed: derive_seed(seed, &[2, c.vehicle_index as u64, c.model_index as u64]),
                ..cma.clone()
            };
            let objective =
                |v: &[f64]| projection_loss(&CameraParams::from_vector(v), ann, model, size);
            let start = c.params.to_vector();
            let candidate_loss = objective(&start);
            let r = cmaes_minimize(
                objective,
                &start,
                &stage2_scales(&c.params),
                Some(&bounds),
                &cfg,
            )?;
            Ok(VehicleMatch {
                vehicle_index: c.vehicle_index,
                model_index: c.model_index,
                model_name: model.name.clone(),
                params: CameraParams::from_vector(&r.x),
                candidate_loss,
                refined_loss: r.f,
            })
        })
        .collect();

    let mut best: Vec<VehicleMatch> = Vec::new();
    for m in refined {
        let m = m?;
        match best.iter_mut().find(|b| b.vehicle_index == m.vehicle_index) {
            Some(b) => {
                if m.refined_loss < b.refined_loss
                    || (m.refined_loss == b.refined_loss && m.model_index < b.model_index)
                {
                    *b = m;
                }
            }
            None => best.push(m),
        }
    }
    best.sort_by_key(|m| m.vehicle_index);
    Ok(best)
}

/// The weighted multi-vehicle loss `L_f` for a fixed set of vehicles.
///
/// Vehicles without a matched model are scored against whichever library
/// model fits them best at the camera being evaluated.
pub struct FineTuneObjective<'a> {
    vehicles: Vec<(&'a VehicleAnnotation, Option<usize>)>,
    models: &'a [VehicleModel],
    size: ImageSize,
    alpha: f64,
    tau: f64,
}

impl<'a> FineTuneObjective<'a> {
    pub fn new(
        annotations: &'a [VehicleAnnotation],
        matches: &[VehicleMatch],
        models: &'a [VehicleModel],
        size: ImageSize,
        alpha: f64,
        tau: f64,
    ) -> Result<Self, CalibError> {
        let vehicles = sorted(annotations)?
            .into_iter()
            .filter(|a| a.keypoints.len() >= MIN_PAIR_KEYPOINTS)
            .map(|a| {
                let m = matches
                    .iter()
                    .find(|m| m.vehicle_index == a.vehicle_index)
                    .map(|m| m.model_index);
                (a, m)
            })
            .collect();
        Ok(Self {
            vehicles,
            models,
            size,
            alpha,
            tau,
        })
    }

    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }

    pub fn vehicle_indices(&self) -> Vec<usize> {
        self.vehicles.iter().map(|(a, _)| a.vehicle_index).collect()
    }

    fn vehicle_loss(&self, pos: usize, params: &CameraParams) -> Option<(f64, Point3)> {
        let (ann, model) = self.vehicles[pos];
        let options: Vec<usize> = match model {
            Some(j) => vec![j],
            None => (0..self.models.len()).collect(),
        };
        let mut best: Option<(f64, Point3)> = None;
        for j in options {
            let Ok(points) = back_project_points(ann, &self.models[j], params, self.size) else {
                continue;
            };
            if points.len() < MIN_PAIR_KEYPOINTS {
                continue;
            }
            let l = fine_tune_loss(&points, &self.models[j], self.alpha).loss;
            if best.is_none_or(|(b, _)| l < b) {
                best = Some((l, centroid(&points)));
            }
        }
        best
    }

    /// `L_f` with the vehicle at position `anchor` (in vehicle-index order)
    /// as the weighting anchor. Infinite if any vehicle cannot be
    /// back-projected in front of the camera.
    pub fn evaluate(&self, params: &CameraParams, anchor: usize) -> f64 {
        if !(params.focal > 0.0) {
            return f64::INFINITY;
        }
        let mut losses = Vec::with_capacity(self.vehicles.len());
        let mut centroids = Vec::with_capacity(self.vehicles.len());
        for pos in 0..self.vehicles.len() {
            match self.vehicle_loss(pos, params) {
                Some((l, c)) => {
                    losses.push(l);
                    centroids.push(c);
                }
                None => return f64::INFINITY,
            }
        }
        anchor_weight(&centroids, anchor, self.tau)
            .iter()
            .zip(&losses)
            .map(|(w, l)| w * l)
            .sum()
    }
}

/// Joint fine-tuning of one camera over all vehicles, once per anchor; the
/// anchor run with the lowest final loss is returned.
pub fn fine_tune(
    candidates: &CandidateSet,
    matches: &[VehicleMatch],
    annotations: &[VehicleAnnotation],
    models: &[VehicleModel],
    size: ImageSize,
    config: &CalibConfig,
) -> Result<CalibResult, CalibError> {
    let objective =
        FineTuneObjective::new(annotations, matches, models, size, config.alpha, config.tau)?;
    let order = objective.vehicle_indices();
    let mut warnings = Vec::new();

    let stage1_params = |m: &VehicleMatch| {
        candidates
            .candidates
            .iter()
            .find(|c| c.vehicle_index == m.vehicle_index && c.model_index == m.model_index)
            .map(|c| c.params)
            .unwrap_or(m.params)
    };

    let anchors: Vec<&VehicleMatch> = matches
        .iter()
        .filter(|m| order.contains(&m.vehicle_index))
        .collect();
    if anchors.is_empty() {
        return Err(CalibError::NoFeasibleVehicle);
    }

    let result = |runs: Vec<AnchorRun>, warnings: Vec<String>| {
        let best = runs
            .iter()
            .min_by(|a, b| {
                a.losses
                    .stage3
                    .total_cmp(&b.losses.stage3)
                    .then(a.anchor_index.cmp(&b.anchor_index))
            })
            .expect("at least one anchor")
            .clone();
        let anchor_model = matches
            .iter()
            .find(|m| m.vehicle_index == best.anchor_index)
            .map(|m| m.model_name.clone())
            .unwrap_or_default();
        CalibResult {
            params: best.params,
            anchor_index: best.anchor_index,
            anchor_model,
            final_loss: best.losses.stage3,
            stage_losses: best.losses,
            matches: matches.to_vec(),
            anchors: runs,
            alpha: config.alpha,
            tau: config.tau,
            focal_default: config.focal_default,
            warnings,
        }
    };

    if objective.len() < 2 {
        let msg =
            "only one usable vehicle; returning its single-vehicle estimate without fine-tuning"
                .to_string();
        log::warn!("{msg}");
        warnings.push(msg);
        let m = anchors
            .iter()
            .min_by(|a, b| {
                a.refined_loss
                    .total_cmp(&b.refined_loss)
                    .then(a.vehicle_index.cmp(&b.vehicle_index))
            })
            .expect("nonempty");
        let pos = order
            .iter()
            .position(|i| *i == m.vehicle_index)
            .expect("anchor is a participant");
        let l2 = objective.evaluate(&m.params, pos);
        let run = AnchorRun {
            anchor_index: m.vehicle_index,
            params: m.params,
            losses: StageLosses {
                stage1: objective.evaluate(&stage1_params(m), pos),
                stage2: l2,
                stage3: l2,
            },
            evaluations: 0,
        };
        return Ok(result(vec![run], warnings));
    }

    let bounds = focal_bounds();
    let runs: Vec<Result<AnchorRun, CalibError>> = anchors
        .par_iter()
        .map(|m| {
            let pos = order
                .iter()
                .position(|i| *i == m.vehicle_index)
                .expect("anchor is a participant");
            let f = |v: &[f64]| objective.evaluate(&CameraParams::from_vector(v), pos);
            let start = m.params.to_vector();
            let stage1 = objective.evaluate(&stage1_params(m), pos);
            let stage2 = f(&start);
            let cfg = CmaConfig {
                seed: derive_seed(config.seed, &[3, m.vehicle_index as u64]),
                ..config.stage3.clone()
            };
            let (params, stage3, evaluations) = if stage2.is_finite() {
                let r = cmaes_minimize(f, &start, &stage2_scales(&m.params), Some(&bounds), &cfg)?;
                (CameraParams::from_vector(&r.x), r.f, r.evaluations)
            } else {
                (m.params, stage2, 0)
            };
            Ok(AnchorRun {
                anchor_index: m.vehicle_index,
                params,
                losses: StageLosses {
                    stage1,
                    stage2,
                    stage3,
                },
                evaluations,
            })
        })
        .collect();
    let runs: Vec<AnchorRun> = runs.into_iter().collect::<Result<_, _>>()?;
    for r in &runs {
        if !r.losses.stage2.is_finite() {
            let msg = format!(
                "anchor {}: some vehicle cannot be back-projected at its stage-2 camera; skipped fine-tuning",
                r.anchor_index
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok(result(runs, warnings))
}

/// Runs all three stages.
pub fn run_pipeline(
    annotations: &[VehicleAnnotation],
    models: &[VehicleModel],
    size: ImageSize,
    config: &CalibConfig,
) -> Result<CalibResult, CalibError> {
    let candidates = candidate_generation(
        annotations,
        models,
        config.focal_default,
        size,
        &config.ransac,
        config.seed,
    )?;
    let matches = model_matching(
        &candidates,
        annotations,
        models,
        size,
        &config.stage2,
        config.seed,
    )?;
    let mut result = fine_tune(&candidates, &matches, annotations, models, size, config)?;
    let skipped: BTreeSet<usize> = candidates
        .skipped
        .iter()
        .filter(|s| s.model_index.is_none())
        .map(|s| s.vehicle_index)
        .collect();
    if !skipped.is_empty() {
        result.warnings.insert(
            0,
            format!("vehicles {skipped:?} have fewer than {MIN_POSE_KEYPOINTS} keypoints and were not posed"),
        );
    }
    Ok(result)
}

/// Camera from the candidate stage alone: each vehicle keeps its
/// lowest-reprojection candidate and the vehicle whose candidate gives the
/// lowest fine-tuning loss is chosen. Returns `(params, vehicle_index)`.
pub fn candidate_baseline(
    candidates: &CandidateSet,
    annotations: &[VehicleAnnotation],
    models: &[VehicleModel],
    size: ImageSize,
    config: &CalibConfig,
) -> Result<(CameraParams, usize), CalibError> {
    let mut best: Vec<&super::Candidate> = Vec::new();
    for c in &candidates.candidates {
        match best.iter_mut().find(|b| b.vehicle_index == c.vehicle_index) {
            Some(b) => {
                if c.reprojection_error < b.reprojection_error {
                    *b = c;
                }
            }
            None => best.push(c),
        }
    }
    if best.is_empty() {
        return Err(CalibError::NoFeasibleVehicle);
    }
    let as_matches: Vec<VehicleMatch> = best
        .iter()
        .map(|c| VehicleMatch {
            vehicle_index: c.vehicle_index,
            model_index: c.model_index,
            model_name: models[c.model_index].name.clone(),
            params: c.params,
            candidate_loss: f64::NAN,
            refined_loss: f64::NAN,
        })
        .collect();
    let objective = FineTuneObjective::new(
        annotations,
        &as_matches,
        models,
        size,
        config.alpha,
        config.tau,
    )?;
    let order = objective.vehicle_indices();
    let scored = best.iter().map(|c| {
        let pos = order
            .iter()
            .position(|i| *i == c.vehicle_index)
            .expect("posed vehicles have 4+ keypoints");
        (objective.evaluate(&c.params, pos), c)
    });
    let (_, c) = scored
        .min_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then(a.1.vehicle_index.cmp(&b.1.vehicle_index))
        })
        .expect("nonempty");
    Ok((c.params, c.vehicle_index))
}
