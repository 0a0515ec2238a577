//! Metric lengths on the calibrated ground plane.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::LaneGeometry;
use crate::geometry::{pixel_to_plane, CameraParams, GeometryError, ImageSize, Point2};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasurementError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("segment set has no ground-truth length")]
    MissingGroundTruth,
    #[error("invalid segment set: {0}")]
    InvalidSegments(String),
}

/// Road-marking points annotated along one or more lines.
///
/// Each line contributes `len − 1` consecutive segments; all segments share
/// the same true length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundSegmentSet {
    pub lines: Vec<Vec<Point2>>,
    pub true_length_m: Option<f64>,
}

impl GroundSegmentSet {
    pub fn validate(&self) -> Result<(), MeasurementError> {
        if self.lines.is_empty() {
            return Err(MeasurementError::InvalidSegments("no lines".into()));
        }
        for (i, line) in self.lines.iter().enumerate() {
            if line.len() < 2 {
                return Err(MeasurementError::InvalidSegments(format!(
                    "line {i} has fewer than 2 points"
                )));
            }
            if line.windows(2).any(|w| w[0] == w[1]) {
                return Err(MeasurementError::InvalidSegments(format!(
                    "line {i} repeats a point"
                )));
            }
        }
        if let Some(l) = self.true_length_m {
            if !(l > 0.0) {
                return Err(MeasurementError::InvalidSegments(
                    "true length must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn segment_count(&self) -> usize {
        self.lines.iter().map(|l| l.len().saturating_sub(1)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub mape_percent: f64,
    /// Points left out of the MAPE because their true value was zero.
    pub skipped: usize,
}

impl ErrorMetrics {
    /// Metrics of paired `(estimate, truth)` values.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let (mut n, mut se, mut ae, mut ape, mut n_pct, mut skipped) =
            (0usize, 0.0, 0.0, 0.0, 0usize, 0usize);
        for (est, truth) in pairs {
            let e = est - truth;
            n += 1;
            se += e * e;
            ae += e.abs();
            if truth == 0.0 {
                skipped += 1;
            } else {
                ape += (e / truth).abs();
                n_pct += 1;
            }
        }
        if n == 0 {
            return Self::default();
        }
        Self {
            rmse: (se / n as f64).sqrt(),
            mae: ae / n as f64,
            mape_percent: if n_pct == 0 {
                0.0
            } else {
                100.0 * ape / n_pct as f64
            },
            skipped,
        }
    }
}

/// Distance in meters between the ground points seen at `p1` and `p2`.
pub fn ground_distance(
    p1: &Point2,
    p2: &Point2,
    params: &CameraParams,
    size: ImageSize,
) -> Result<f64, MeasurementError> {
    let a = pixel_to_plane(p1, params, size, 0.0)?;
    let b = pixel_to_plane(p2, params, size, 0.0)?;
    Ok((a - b).norm())
}

/// Estimated length of every consecutive segment, line by line.
pub fn segment_lengths(
    segments: &GroundSegmentSet,
    params: &CameraParams,
    size: ImageSize,
) -> Result<Vec<f64>, MeasurementError> {
    segments.validate()?;
    let mut out = Vec::with_capacity(segments.segment_count());
    for line in &segments.lines {
        for w in line.windows(2) {
            out.push(ground_distance(&w[0], &w[1], params, size)?);
        }
    }
    Ok(out)
}

pub fn evaluate_markings(
    segments: &GroundSegmentSet,
    params: &CameraParams,
    size: ImageSize,
) -> Result<ErrorMetrics, MeasurementError> {
    let truth = segments
        .true_length_m
        .ok_or(MeasurementError::MissingGroundTruth)?;
    let lengths = segment_lengths(segments, params, size)?;
    Ok(ErrorMetrics::from_pairs(
        lengths.into_iter().map(|l| (l, truth)),
    ))
}

/// Ground length of a lane's centerline.
pub fn lane_length(
    lane: &LaneGeometry,
    params: &CameraParams,
    size: ImageSize,
) -> Result<f64, MeasurementError> {
    if lane.centerline.len() < 2 {
        return Err(MeasurementError::InvalidSegments(format!(
            "lane {} centerline has fewer than 2 points",
            lane.lane_id
        )));
    }
    lane.centerline
        .windows(2)
        .map(|w| ground_distance(&w[0], &w[1], params, size))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, Point3, Rotation};
    use nalgebra::Vector3;
    use proptest::prelude::*;

    const SIZE: ImageSize = ImageSize {
        width: 320.0,
        height: 240.0,
    };

    fn camera() -> CameraParams {
        let r =
            Rotation::from_axis_angle(&Vector3::new(std::f64::consts::FRAC_PI_2 + 0.4, 0.0, 0.0));
        let center = Vector3::new(1.0, -10.0, 7.0);
        CameraParams::new(380.0, r, -(r.matrix() * center))
    }

    fn px(x: f64, y: f64) -> Point2 {
        project(&Point3::new(x, y, 0.0), &camera(), SIZE).unwrap()
    }

    #[test]
    fn same_point_is_zero() {
        let p = px(0.0, 5.0);
        assert_eq!(ground_distance(&p, &p, &camera(), SIZE).unwrap(), 0.0);
    }

    #[test]
    fn six_meter_marking() {
        let d = ground_distance(&px(-1.0, 2.0), &px(-1.0, 8.0), &camera(), SIZE).unwrap();
        assert!((d - 6.0).abs() < 1e-6);
    }

    #[test]
    fn marking_metrics_exact_and_hand_computed() {
        let lines = vec![
            (0..7).map(|i| px(-1.75, 6.0 * i as f64)).collect(),
            (0..7).map(|i| px(1.75, 6.0 * i as f64)).collect(),
        ];
        let set = GroundSegmentSet {
            lines,
            true_length_m: Some(6.0),
        };
        assert_eq!(set.segment_count(), 12);
        let m = evaluate_markings(&set, &camera(), SIZE).unwrap();
        assert!(m.rmse < 1e-6 && m.mae < 1e-6 && m.mape_percent < 1e-5);

        let m = ErrorMetrics::from_pairs([(5.9, 6.0), (6.1, 6.0)]);
        assert!((m.mae - 0.1).abs() < 1e-12);
        assert!((m.rmse - 0.1).abs() < 1e-12);
        assert!((m.mape_percent - 100.0 / 60.0).abs() < 1e-9);
    }

    #[test]
    fn missing_truth() {
        let set = GroundSegmentSet {
            lines: vec![vec![px(0.0, 1.0), px(0.0, 2.0)]],
            true_length_m: None,
        };
        assert_eq!(
            evaluate_markings(&set, &camera(), SIZE),
            Err(MeasurementError::MissingGroundTruth)
        );
    }

    #[test]
    fn point_above_horizon_is_rejected() {
        // Pitched down only ~5°, so the top image row looks at the sky.
        let r =
            Rotation::from_axis_angle(&Vector3::new(std::f64::consts::FRAC_PI_2 + 0.09, 0.0, 0.0));
        let cam = CameraParams::new(380.0, r, -(r.matrix() * Vector3::new(0.0, 0.0, 6.0)));
        let ground = project(&Point3::new(0.0, 20.0, 0.0), &cam, SIZE).unwrap();
        let sky = Point2::new(160.0, 0.0);
        assert!(matches!(
            ground_distance(&sky, &ground, &cam, SIZE),
            Err(MeasurementError::Geometry(
                GeometryError::PointBehindCamera { .. }
            ))
        ));
    }

    #[test]
    fn lane_lengths() {
        let lane = |pts: Vec<Point2>| LaneGeometry {
            lane_id: 1,
            polygon: vec![px(0.0, 0.0), px(1.0, 0.0), px(1.0, 1.0)],
            centerline: pts,
            length_m: 1.0,
        };
        let l = lane_length(&lane(vec![px(0.0, 3.0), px(0.0, 9.0)]), &camera(), SIZE).unwrap();
        assert!((l - 6.0).abs() < 1e-6);
        let l = lane_length(
            &lane(vec![px(0.0, 3.0), px(0.0, 8.0), px(0.0, 13.0)]),
            &camera(),
            SIZE,
        )
        .unwrap();
        assert!((l - 10.0).abs() < 1e-6);
        // Curved: chord lengths of a quarter circle of radius 10.
        let ground: Vec<(f64, f64)> = (0..=6)
            .map(|i| {
                let a = i as f64 * std::f64::consts::FRAC_PI_2 / 6.0;
                (-5.0 + 10.0 * (1.0 - a.cos()), 2.0 + 10.0 * a.sin())
            })
            .collect();
        let oracle: f64 = ground
            .windows(2)
            .map(|w| ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt())
            .sum();
        let l = lane_length(
            &lane(ground.iter().map(|(x, y)| px(*x, *y)).collect()),
            &camera(),
            SIZE,
        )
        .unwrap();
        assert!((l - oracle).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn triangle_inequality(a in (-4.0f64..4.0, 0.0f64..20.0), b in (-4.0f64..4.0, 0.0f64..20.0), c in (-4.0f64..4.0, 0.0f64..20.0)) {
            let (pa, pb, pc) = (px(a.0, a.1), px(b.0, b.1), px(c.0, c.1));
            let d = |p: &Point2, q: &Point2| ground_distance(p, q, &camera(), SIZE).unwrap();
            prop_assert!(d(&pa, &pb) + d(&pb, &pc) >= d(&pa, &pc) - 1e-9);
            prop_assert!((d(&pa, &pb) - d(&pb, &pa)).abs() < 1e-9);
        }

        #[test]
        fn reversing_points_keeps_metrics(ys in prop::collection::vec(0.0f64..25.0, 3..8), f in 300.0f64..460.0) {
            let mut cam = camera();
            let line: Vec<Point2> = ys.iter().enumerate().map(|(i, y)| px(0.3 * i as f64, *y + i as f64 * 0.01)).collect();
            cam.focal = f;
            let fwd = GroundSegmentSet { lines: vec![line.clone()], true_length_m: Some(6.0) };
            let rev = GroundSegmentSet { lines: vec![line.into_iter().rev().collect()], true_length_m: Some(6.0) };
            let a = evaluate_markings(&fwd, &cam, SIZE).unwrap();
            let b = evaluate_markings(&rev, &cam, SIZE).unwrap();
            prop_assert!((a.rmse - b.rmse).abs() < 1e-9 && (a.mae - b.mae).abs() < 1e-9);
            prop_assert!((a.mape_percent - b.mape_percent).abs() < 1e-7);
        }
    }
}
