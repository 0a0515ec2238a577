//! Detection boxes, lane assignment, per-lane counts and detection metrics.

use std::collections::BTreeMap;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::geometry::Point2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectionError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("lane {0}: {1}")]
    InvalidLane(u32, String),
    #[error("duplicate lane id {0}")]
    DuplicateLane(u32),
    #[error("lanes {0} and {1} overlap")]
    OverlappingLanes(u32, u32),
    #[error("IoU threshold must lie in (0, 1), got {0}")]
    InvalidThreshold(f64),
}

/// Axis-aligned box in pixels with a detector confidence.
///
/// Serialised as `[x_min, y_min, x_max, y_max, confidence]`; the confidence
/// may be omitted (ground truth) and then reads as 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub confidence: f64,
}

impl BoundingBox {
    pub fn new(
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        confidence: f64,
    ) -> Result<Self, DetectionError> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
            confidence,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), DetectionError> {
        if !(self.x_min < self.x_max && self.y_min < self.y_max) {
            return Err(DetectionError::InvalidBox(format!(
                "corners ({}, {}) and ({}, {}) are not ordered",
                self.x_min, self.y_min, self.x_max, self.y_max
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(DetectionError::InvalidBox(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn center(&self) -> Point2 {
        Point2::new(
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }
}

impl Serialize for BoundingBox {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [
            self.x_min,
            self.y_min,
            self.x_max,
            self.y_max,
            self.confidence,
        ]
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        let conf = match v.len() {
            4 => 1.0,
            5 => v[4],
            n => {
                return Err(D::Error::custom(format!(
                    "box needs 4 or 5 numbers, got {n}"
                )))
            }
        };
        BoundingBox::new(v[0], v[1], v[2], v[3], conf).map_err(D::Error::custom)
    }
}

/// Detector output for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    /// UTC seconds since the Unix epoch.
    pub ts: f64,
    pub camera: String,
    pub boxes: Vec<BoundingBox>,
}

/// A driving lane drawn in the image, with its ground length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneGeometry {
    pub lane_id: u32,
    pub polygon: Vec<Point2>,
    pub centerline: Vec<Point2>,
    pub length_m: f64,
}

impl LaneGeometry {
    pub fn validate(&self) -> Result<(), DetectionError> {
        let bad = |m: &str| DetectionError::InvalidLane(self.lane_id, m.to_string());
        if self.polygon.len() < 3 {
            return Err(bad("polygon needs at least 3 vertices"));
        }
        if !(self.length_m > 0.0) {
            return Err(bad("length_m must be positive"));
        }
        let edges = edges(&self.polygon);
        let n = edges.len();
        for i in 0..n {
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if !adjacent && segments_touch(edges[i], edges[j]) {
                    return Err(bad("polygon is self-intersecting"));
                }
            }
        }
        Ok(())
    }

    /// Inside or on the boundary.
    pub fn contains(&self, p: &Point2) -> bool {
        edges(&self.polygon)
            .iter()
            .any(|&(a, b)| on_segment(p, a, b))
            || strictly_inside(p, &self.polygon)
    }

    fn centroid(&self) -> Point2 {
        // Area centroid; falls back to the vertex mean for degenerate area.
        let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
        for (p, q) in edges(&self.polygon) {
            let cross = p.x * q.y - q.x * p.y;
            a += cross;
            cx += (p.x + q.x) * cross;
            cy += (p.y + q.y) * cross;
        }
        if a.abs() < 1e-12 {
            let n = self.polygon.len() as f64;
            let s = self
                .polygon
                .iter()
                .fold((0.0, 0.0), |acc, p| (acc.0 + p.x, acc.1 + p.y));
            return Point2::new(s.0 / n, s.1 / n);
        }
        Point2::new(cx / (3.0 * a), cy / (3.0 * a))
    }
}

fn edges(poly: &[Point2]) -> Vec<(Point2, Point2)> {
    (0..poly.len())
        .map(|i| (poly[i], poly[(i + 1) % poly.len()]))
        .collect()
}

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

const ON_EDGE_EPS: f64 = 1e-9;

fn on_segment(p: &Point2, a: Point2, b: Point2) -> bool {
    let len = (b - a).norm().max(1.0);
    cross(a, b, *p).abs() <= ON_EDGE_EPS * len
        && p.x >= a.x.min(b.x) - ON_EDGE_EPS
        && p.x <= a.x.max(b.x) + ON_EDGE_EPS
        && p.y >= a.y.min(b.y) - ON_EDGE_EPS
        && p.y <= a.y.max(b.y) + ON_EDGE_EPS
}

/// Even-odd rule; boundary points are not "strictly" inside.
fn strictly_inside(p: &Point2, poly: &[Point2]) -> bool {
    if edges(poly).iter().any(|&(a, b)| on_segment(p, a, b)) {
        return false;
    }
    let mut inside = false;
    for (a, b) in edges(poly) {
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn midpoints(poly: &[Point2]) -> impl Iterator<Item = Point2> + '_ {
    (0..poly.len()).map(|i| nalgebra::center(&poly[i], &poly[(i + 1) % poly.len()]))
}

fn segments_cross_properly(s: (Point2, Point2), t: (Point2, Point2)) -> bool {
    let d1 = cross(t.0, t.1, s.0);
    let d2 = cross(t.0, t.1, s.1);
    let d3 = cross(s.0, s.1, t.0);
    let d4 = cross(s.0, s.1, t.1);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

fn segments_touch(s: (Point2, Point2), t: (Point2, Point2)) -> bool {
    segments_cross_properly(s, t)
        || on_segment(&s.0, t.0, t.1)
        || on_segment(&s.1, t.0, t.1)
        || on_segment(&t.0, s.0, s.1)
        || on_segment(&t.1, s.0, s.1)
}

/// Validated, non-overlapping lanes kept in ascending `lane_id` order.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneSet {
    lanes: Vec<LaneGeometry>,
}

impl LaneSet {
    /// Lanes may share edges but must not overlap in area.
    pub fn new(mut lanes: Vec<LaneGeometry>) -> Result<Self, DetectionError> {
        lanes.sort_by_key(|l| l.lane_id);
        for l in &lanes {
            l.validate()?;
        }
        for w in lanes.windows(2) {
            if w[0].lane_id == w[1].lane_id {
                return Err(DetectionError::DuplicateLane(w[0].lane_id));
            }
        }
        for (i, a) in lanes.iter().enumerate() {
            for b in &lanes[i + 1..] {
                let crossing = edges(&a.polygon).iter().any(|ea| {
                    edges(&b.polygon)
                        .iter()
                        .any(|eb| segments_cross_properly(*ea, *eb))
                });
                let nested = strictly_inside(&a.centroid(), &b.polygon)
                    || strictly_inside(&b.centroid(), &a.polygon)
                    || a.polygon.iter().any(|p| strictly_inside(p, &b.polygon))
                    || b.polygon.iter().any(|p| strictly_inside(p, &a.polygon))
                    || midpoints(&a.polygon).any(|p| strictly_inside(&p, &b.polygon))
                    || midpoints(&b.polygon).any(|p| strictly_inside(&p, &a.polygon));
                if crossing || nested {
                    return Err(DetectionError::OverlappingLanes(a.lane_id, b.lane_id));
                }
            }
        }
        Ok(Self { lanes })
    }

    pub fn lanes(&self) -> &[LaneGeometry] {
        &self.lanes
    }

    /// Lane containing the box centre; the lowest id wins on shared edges.
    pub fn assign(&self, b: &BoundingBox) -> Option<u32> {
        let c = b.center();
        self.lanes
            .iter()
            .find(|l| l.contains(&c))
            .map(|l| l.lane_id)
    }
}

pub fn assign_lane(b: &BoundingBox, lanes: &LaneSet) -> Option<u32> {
    lanes.assign(b)
}

/// Boxes with confidence at least `confidence_min`, counted per lane. Every
/// lane appears in the map, with zero if empty.
pub fn count_per_lane(
    frame: &DetectionFrame,
    lanes: &LaneSet,
    confidence_min: f64,
) -> BTreeMap<u32, usize> {
    let mut counts: BTreeMap<u32, usize> = lanes.lanes.iter().map(|l| (l.lane_id, 0)).collect();
    for b in frame
        .boxes
        .iter()
        .filter(|b| b.confidence >= confidence_min)
    {
        if let Some(id) = lanes.assign(b) {
            *counts.entry(id).or_default() += 1;
        }
    }
    counts
}

pub const DEFAULT_CONFIDENCE_MIN: f64 = 0.25;

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// `(prediction index, truth index, IoU)` for every true positive.
    pub matches: Vec<(usize, usize, f64)>,
    /// Whether each prediction, in input order, is a true positive.
    pub is_tp: Vec<bool>,
}

/// Prediction indices by descending confidence; equal confidences keep
/// input order.
fn ranked(preds: &[BoundingBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
    order
}

/// Greedy matching: predictions in descending confidence each take the
/// unmatched truth with the highest IoU at or above the threshold.
pub fn match_detections(
    preds: &[BoundingBox],
    truths: &[BoundingBox],
    iou_threshold: f64,
) -> MatchResult {
    let mut taken = vec![false; truths.len()];
    let mut out = MatchResult {
        is_tp: vec![false; preds.len()],
        ..Default::default()
    };
    for p in ranked(preds) {
        let mut best: Option<(usize, f64)> = None;
        for (t, truth) in truths.iter().enumerate() {
            if taken[t] {
                continue;
            }
            let o = iou(&preds[p], truth);
            if o >= iou_threshold && best.is_none_or(|(_, b)| o > b) {
                best = Some((t, o));
            }
        }
        if let Some((t, o)) = best {
            taken[t] = true;
            out.is_tp[p] = true;
            out.matches.push((p, t, o));
        }
    }
    out.tp = out.matches.len();
    out.fp = preds.len() - out.tp;
    out.fn_ = truths.len() - out.tp;
    out
}

/// Precision is 1 with no predictions; recall is 1 with no truths.
pub fn precision_recall(tp: usize, fp: usize, fn_: usize) -> (f64, f64) {
    let p = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let r = if tp + fn_ == 0 {
        1.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    (p, r)
}

/// Area under the all-point interpolated precision/recall curve of a ranked
/// list of `(confidence, is_true_positive)` against `n_truth` objects.
fn ap_from_ranked(mut scored: Vec<(f64, bool)>, n_truth: usize) -> f64 {
    if n_truth == 0 {
        return if scored.is_empty() { 1.0 } else { 0.0 };
    }
    // Stable sort: equal confidences keep their order.
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut recall = Vec::with_capacity(scored.len());
    let mut precision = Vec::with_capacity(scored.len());
    let mut tp = 0usize;
    for (i, (_, hit)) in scored.iter().enumerate() {
        if *hit {
            tp += 1;
        }
        recall.push(tp as f64 / n_truth as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev_r) * p;
        prev_r = *r;
    }
    ap
}

pub fn average_precision(preds: &[BoundingBox], truths: &[BoundingBox], iou_threshold: f64) -> f64 {
    average_precision_multi(&[(preds.to_vec(), truths.to_vec())], iou_threshold)
}

/// AP over several images, ranking all predictions together.
pub fn average_precision_multi(
    images: &[(Vec<BoundingBox>, Vec<BoundingBox>)],
    iou_threshold: f64,
) -> f64 {
    let mut scored = Vec::new();
    let mut n_truth = 0;
    for (preds, truths) in images {
        let m = match_detections(preds, truths, iou_threshold);
        for p in ranked(preds) {
            scored.push((preds[p].confidence, m.is_tp[p]));
        }
        n_truth += truths.len();
    }
    ap_from_ranked(scored, n_truth)
}

/// Raw precision and recall after each prediction, all images ranked
/// together by descending confidence: `(confidence, precision, recall)`.
pub fn precision_recall_curve(
    images: &[(Vec<BoundingBox>, Vec<BoundingBox>)],
    iou_threshold: f64,
) -> Vec<(f64, f64, f64)> {
    let mut scored = Vec::new();
    let mut n_truth = 0;
    for (preds, truths) in images {
        let m = match_detections(preds, truths, iou_threshold);
        for p in ranked(preds) {
            scored.push((preds[p].confidence, m.is_tp[p]));
        }
        n_truth += truths.len();
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut tp = 0usize;
    scored
        .iter()
        .enumerate()
        .map(|(i, (c, hit))| {
            tp += usize::from(*hit);
            let recall = if n_truth == 0 {
                1.0
            } else {
                tp as f64 / n_truth as f64
            };
            (*c, tp as f64 / (i + 1) as f64, recall)
        })
        .collect()
}

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Mean AP over [`coco_thresholds`].
pub fn mean_average_precision(images: &[(Vec<BoundingBox>, Vec<BoundingBox>)]) -> f64 {
    let t = coco_thresholds();
    t.iter()
        .map(|th| average_precision_multi(images, *th))
        .sum::<f64>()
        / t.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64, c: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1, c).unwrap()
    }

    fn square(id: u32, x0: f64, y0: f64, x1: f64, y1: f64) -> LaneGeometry {
        LaneGeometry {
            lane_id: id,
            polygon: vec![
                Point2::new(x0, y0),
                Point2::new(x1, y0),
                Point2::new(x1, y1),
                Point2::new(x0, y1),
            ],
            centerline: vec![
                Point2::new((x0 + x1) / 2.0, y0),
                Point2::new((x0 + x1) / 2.0, y1),
            ],
            length_m: 50.0,
        }
    }

    #[test]
    fn iou_examples() {
        let a = bb(0.0, 0.0, 2.0, 2.0, 1.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bb(5.0, 5.0, 6.0, 6.0, 1.0)), 0.0);
        assert!((iou(&a, &bb(1.0, 1.0, 3.0, 3.0, 1.0)) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_boxes() {
        assert!(BoundingBox::new(1.0, 0.0, 1.0, 2.0, 0.5).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.0, 2.0, 1.5).is_err());
        assert!(serde_json::from_str::<BoundingBox>("[0,0,1]").is_err());
        let b: BoundingBox = serde_json::from_str("[0,0,1,2]").unwrap();
        assert_eq!(b.confidence, 1.0);
    }

    #[test]
    fn matching_edge_cases() {
        let truths = vec![
            bb(0.0, 0.0, 10.0, 10.0, 1.0),
            bb(20.0, 0.0, 30.0, 10.0, 1.0),
        ];
        let m = match_detections(&truths, &truths, 0.5);
        assert_eq!((m.tp, m.fp, m.fn_), (2, 0, 0));
        let m = match_detections(&[], &truths, 0.5);
        assert_eq!((m.tp, m.fp, m.fn_), (0, 0, 2));
        // Duplicate predictions on one truth: the lower-confidence one is FP.
        let preds = vec![bb(0.0, 0.0, 10.0, 10.0, 0.4), bb(0.5, 0.0, 10.0, 10.0, 0.9)];
        let m = match_detections(&preds, &truths[..1], 0.5);
        assert_eq!((m.tp, m.fp, m.fn_), (1, 1, 0));
        assert_eq!(m.is_tp, vec![false, true]);
    }

    #[test]
    fn precision_recall_conventions() {
        assert_eq!(precision_recall(8, 2, 2), (0.8, 0.8));
        assert_eq!(precision_recall(0, 0, 5), (1.0, 0.0));
        assert_eq!(precision_recall(0, 3, 0), (0.0, 1.0));
    }

    #[test]
    fn ap_extremes() {
        let truths = vec![
            bb(0.0, 0.0, 10.0, 10.0, 1.0),
            bb(20.0, 0.0, 30.0, 10.0, 1.0),
        ];
        let perfect = vec![
            bb(0.0, 0.0, 10.0, 10.0, 0.9),
            bb(20.0, 0.0, 30.0, 10.0, 0.8),
        ];
        assert_eq!(average_precision(&perfect, &truths, 0.5), 1.0);
        let wrong = vec![bb(50.0, 50.0, 60.0, 60.0, 0.9)];
        assert_eq!(average_precision(&wrong, &truths, 0.5), 0.0);
        assert_eq!(mean_average_precision(&[(perfect, truths)]), 1.0);
    }

    #[test]
    fn ap_hand_example() {
        // Ranked hits: T F T → recall 0.5,0.5,1.0 and precision 1,0.5,0.667.
        let truths = vec![
            bb(0.0, 0.0, 10.0, 10.0, 1.0),
            bb(20.0, 0.0, 30.0, 10.0, 1.0),
        ];
        let preds = vec![
            bb(0.0, 0.0, 10.0, 10.0, 0.9),
            bb(50.0, 0.0, 60.0, 10.0, 0.8),
            bb(20.0, 0.0, 30.0, 10.0, 0.7),
        ];
        let ap = average_precision(&preds, &truths, 0.5);
        assert!((ap - (0.5 * 1.0 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn lane_assignment() {
        let lanes = LaneSet::new(vec![
            square(2, 10.0, 0.0, 20.0, 100.0),
            square(1, 0.0, 0.0, 10.0, 100.0),
        ])
        .unwrap();
        assert_eq!(lanes.assign(&bb(12.0, 40.0, 18.0, 50.0, 1.0)), Some(2));
        assert_eq!(lanes.assign(&bb(30.0, 40.0, 38.0, 50.0, 1.0)), None);
        // Centre exactly on the shared edge x = 10.
        assert_eq!(lanes.assign(&bb(8.0, 40.0, 12.0, 50.0, 1.0)), Some(1));
    }

    #[test]
    fn overlapping_lanes_rejected() {
        let err = LaneSet::new(vec![
            square(1, 0.0, 0.0, 10.0, 100.0),
            square(2, 5.0, 0.0, 15.0, 100.0),
        ]);
        assert_eq!(err, Err(DetectionError::OverlappingLanes(1, 2)));
        let same = LaneSet::new(vec![
            square(1, 0.0, 0.0, 10.0, 10.0),
            square(2, 0.0, 0.0, 10.0, 10.0),
        ]);
        assert!(matches!(same, Err(DetectionError::OverlappingLanes(..))));
        let nested = LaneSet::new(vec![
            square(1, 0.0, 0.0, 10.0, 10.0),
            square(2, 2.0, 2.0, 4.0, 4.0),
        ]);
        assert!(matches!(nested, Err(DetectionError::OverlappingLanes(..))));
        let dup = LaneSet::new(vec![
            square(1, 0.0, 0.0, 10.0, 10.0),
            square(1, 20.0, 0.0, 30.0, 10.0),
        ]);
        assert_eq!(dup, Err(DetectionError::DuplicateLane(1)));
    }

    #[test]
    fn self_intersecting_lane_rejected() {
        let bow = LaneGeometry {
            lane_id: 3,
            polygon: vec![
                Point2::new(0.0, 0.0),
                Point2::new(10.0, 10.0),
                Point2::new(10.0, 0.0),
                Point2::new(0.0, 10.0),
            ],
            centerline: vec![],
            length_m: 1.0,
        };
        assert!(matches!(
            bow.validate(),
            Err(DetectionError::InvalidLane(3, _))
        ));
    }

    #[test]
    fn counting() {
        let lanes = LaneSet::new(vec![
            square(1, 0.0, 0.0, 10.0, 100.0),
            square(2, 10.0, 0.0, 20.0, 100.0),
        ])
        .unwrap();
        let empty = DetectionFrame {
            ts: 0.0,
            camera: "c".into(),
            boxes: vec![],
        };
        assert_eq!(
            count_per_lane(&empty, &lanes, 0.25),
            BTreeMap::from([(1, 0), (2, 0)])
        );
        let frame = DetectionFrame {
            ts: 0.0,
            camera: "c".into(),
            boxes: vec![
                bb(1.0, 1.0, 3.0, 3.0, 0.9),
                bb(1.0, 10.0, 3.0, 13.0, 0.6),
                bb(1.0, 20.0, 3.0, 23.0, 0.1),
                bb(40.0, 20.0, 43.0, 23.0, 0.9),
            ],
        };
        assert_eq!(
            count_per_lane(&frame, &lanes, 0.25),
            BTreeMap::from([(1, 2), (2, 0)])
        );
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (
            0.0f64..50.0,
            0.0f64..50.0,
            1.0f64..30.0,
            1.0f64..30.0,
            0.0f64..=1.0,
        )
            .prop_map(|(x, y, w, h, c)| bb(x, y, x + w, y + h, c))
    }

    /// Maximum number of prediction/truth pairs with IoU ≥ threshold, over
    /// all one-to-one assignments.
    fn optimal_tp(preds: &[BoundingBox], truths: &[BoundingBox], th: f64) -> usize {
        fn go(
            p: usize,
            preds: &[BoundingBox],
            truths: &[BoundingBox],
            used: &mut Vec<bool>,
            th: f64,
        ) -> usize {
            if p == preds.len() {
                return 0;
            }
            let mut best = go(p + 1, preds, truths, used, th);
            for t in 0..truths.len() {
                if !used[t] && iou(&preds[p], &truths[t]) >= th {
                    used[t] = true;
                    best = best.max(1 + go(p + 1, preds, truths, used, th));
                    used[t] = false;
                }
            }
            best
        }
        go(0, preds, truths, &mut vec![false; truths.len()], th)
    }

    proptest! {
        #[test]
        fn iou_properties(a in arb_box(), b in arb_box()) {
            let x = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&x));
            prop_assert_eq!(x, iou(&b, &a));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn matching_partitions(preds in prop::collection::vec(arb_box(), 0..8), truths in prop::collection::vec(arb_box(), 0..8), th in 0.1f64..0.9) {
            let m = match_detections(&preds, &truths, th);
            prop_assert_eq!(m.tp + m.fn_, truths.len());
            prop_assert_eq!(m.tp + m.fp, preds.len());
            let mut seen = std::collections::BTreeSet::new();
            prop_assert!(m.matches.iter().all(|(_, t, _)| seen.insert(*t)));
        }

        // Disjoint truths: at a threshold ≥ 0.5 each prediction can clear the
        // threshold with at most one truth, so greedy is optimal.
        #[test]
        fn greedy_is_optimal_for_separated_truths(
            cells in prop::collection::btree_set((0usize..4, 0usize..4), 1..6),
            jitter in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, 0.0f64..1.0, 0usize..16), 0..10),
            th in 0.5f64..0.9,
        ) {
            let truths: Vec<BoundingBox> = cells.iter().map(|&(i, j)| bb(i as f64 * 20.0, j as f64 * 20.0, i as f64 * 20.0 + 10.0, j as f64 * 20.0 + 10.0, 1.0)).collect();
            let preds: Vec<BoundingBox> = jitter.iter().map(|&(dx, dy, c, k)| {
                let t = truths[k % truths.len()];
                bb(t.x_min + dx, t.y_min + dy, t.x_max + dx, t.y_max + dy, c)
            }).collect();
            let m = match_detections(&preds, &truths, th);
            prop_assert_eq!(m.tp, optimal_tp(&preds, &truths, th));
        }

        #[test]
        fn ap_is_rank_only(preds in prop::collection::vec(arb_box(), 1..8), truths in prop::collection::vec(arb_box(), 1..6), scale in 0.1f64..1.0) {
            let a = average_precision(&preds, &truths, 0.5);
            let scaled: Vec<BoundingBox> = preds.iter().map(|b| BoundingBox { confidence: b.confidence * scale, ..*b }).collect();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert_eq!(a, average_precision(&scaled, &truths, 0.5));
        }
    }
}
