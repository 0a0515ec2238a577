//! Lane densities from per-frame counts, interval aggregation,
//! spatio-temporal grids and error metrics.

use std::collections::BTreeMap;

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::LaneGeometry;
use crate::measurement::ErrorMetrics;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DensityError {
    #[error("lane {0} has non-positive length")]
    ZeroLaneLength(u32),
    #[error("count for unknown lane {0}")]
    UnknownLane(u32),
    #[error("series lengths differ: {0} estimates vs {1} truths")]
    LengthMismatch(usize, usize),
    #[error("bin width must be positive")]
    InvalidBin,
    #[error("timestamp {0} is out of range")]
    InvalidTimestamp(f64),
}

/// Default aggregation interval: 15 minutes.
pub const DEFAULT_INTERVAL_S: u64 = 900;

/// `k = N / L` in vehicles per km per lane.
pub fn density(count: usize, length_m: f64) -> f64 {
    count as f64 / (length_m / 1000.0)
}

pub fn density_from_counts(
    counts: &BTreeMap<u32, usize>,
    lanes: &[LaneGeometry],
) -> Result<BTreeMap<u32, f64>, DensityError> {
    for l in lanes {
        if !(l.length_m > 0.0) {
            return Err(DensityError::ZeroLaneLength(l.lane_id));
        }
    }
    counts
        .iter()
        .map(|(id, n)| {
            let lane = lanes
                .iter()
                .find(|l| l.lane_id == *id)
                .ok_or(DensityError::UnknownLane(*id))?;
            Ok((*id, density(*n, lane.length_m)))
        })
        .collect()
}

/// Density of one lane in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDensity {
    pub ts: f64,
    pub camera: String,
    pub lane_id: u32,
    pub k_veh_per_km: f64,
}

/// Mean density over one interval, or a gap when no frame fell inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRecord {
    pub camera: String,
    pub lane_id: u32,
    /// Interval start in UTC seconds since the epoch.
    pub interval_start: i64,
    pub interval_length_s: u64,
    /// `None` marks a gap.
    pub k_veh_per_km: Option<f64>,
    pub n_frames: usize,
}

impl DensityRecord {
    pub fn is_gap(&self) -> bool {
        self.n_frames == 0
    }

    pub fn interval_start_utc(&self) -> String {
        utc_iso(self.interval_start)
    }
}

pub fn utc_iso(ts: i64) -> String {
    DateTime::<Utc>::from_timestamp(ts, 0)
        .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| ts.to_string())
}

/// Means of per-frame densities per camera, lane and interval. Intervals
/// between a lane's first and last frame without any frame are emitted as
/// gaps. Output is sorted by camera, lane and interval start.
pub fn aggregate(
    frames: &[FrameDensity],
    interval_s: u64,
) -> Result<Vec<DensityRecord>, DensityError> {
    if interval_s == 0 {
        return Err(DensityError::InvalidBin);
    }
    let width = interval_s as i64;
    let mut bins: BTreeMap<(String, u32), BTreeMap<i64, (f64, usize)>> = BTreeMap::new();
    for f in frames {
        if !f.ts.is_finite() {
            return Err(DensityError::InvalidTimestamp(f.ts));
        }
        let start = (f.ts.floor() as i64).div_euclid(width) * width;
        let e = bins
            .entry((f.camera.clone(), f.lane_id))
            .or_default()
            .entry(start)
            .or_insert((0.0, 0));
        e.0 += f.k_veh_per_km;
        e.1 += 1;
    }
    let mut out = Vec::new();
    for ((camera, lane_id), lane_bins) in bins {
        let (first, last) = (
            *lane_bins.keys().next().unwrap(),
            *lane_bins.keys().next_back().unwrap(),
        );
        let mut start = first;
        while start <= last {
            let (k, n_frames) = match lane_bins.get(&start) {
                Some((sum, n)) => (Some(sum / *n as f64), *n),
                None => (None, 0),
            };
            out.push(DensityRecord {
                camera: camera.clone(),
                lane_id,
                interval_start: start,
                interval_length_s: interval_s,
                k_veh_per_km: k,
                n_frames,
            });
            start += width;
        }
    }
    Ok(out)
}

pub fn error_metrics(estimated: &[f64], truth: &[f64]) -> Result<ErrorMetrics, DensityError> {
    if estimated.len() != truth.len() {
        return Err(DensityError::LengthMismatch(estimated.len(), truth.len()));
    }
    Ok(ErrorMetrics::from_pairs(
        estimated.iter().copied().zip(truth.iter().copied()),
    ))
}

/// A vehicle seen in a frame at distance `y_m` along its lane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleObservation {
    pub ts: f64,
    pub y_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatioTemporalCell {
    /// Seconds after local midnight.
    pub time_of_day_s: u32,
    pub time_bin_s: u32,
    pub location_start_m: f64,
    pub location_end_m: f64,
    /// Vehicles per km, averaged over the frames in the time bin.
    pub mean_density: f64,
    pub vehicle_count: usize,
    pub n_frames: usize,
}

fn time_of_day(ts: f64, utc_offset_s: i64) -> i64 {
    (ts.floor() as i64 + utc_offset_s).rem_euclid(86_400)
}

/// Density per time-of-day bin and location bin along one lane of length
/// `lane_length_m`, averaged over every frame in `frame_ts` (frames without
/// vehicles count as zero). Observations outside `[0, lane_length_m]` are
/// ignored; time bins with no frame are omitted.
pub fn st_grid(
    frame_ts: &[f64],
    observations: &[VehicleObservation],
    lane_length_m: f64,
    time_bin_s: u32,
    space_bin_m: f64,
    utc_offset_s: i64,
) -> Result<Vec<SpatioTemporalCell>, DensityError> {
    if time_bin_s == 0 || !(space_bin_m > 0.0) {
        return Err(DensityError::InvalidBin);
    }
    if !(lane_length_m > 0.0) {
        return Err(DensityError::ZeroLaneLength(0));
    }
    let n_space = (lane_length_m / space_bin_m).ceil().max(1.0) as usize;
    let tb = time_bin_s as i64;
    let mut frames_per_bin: BTreeMap<i64, usize> = BTreeMap::new();
    for ts in frame_ts {
        *frames_per_bin
            .entry(time_of_day(*ts, utc_offset_s) / tb)
            .or_default() += 1;
    }
    let mut counts: BTreeMap<(i64, usize), usize> = BTreeMap::new();
    for o in observations {
        if !(0.0..=lane_length_m).contains(&o.y_m) {
            continue;
        }
        let s = ((o.y_m / space_bin_m).floor() as usize).min(n_space - 1);
        *counts
            .entry((time_of_day(o.ts, utc_offset_s) / tb, s))
            .or_default() += 1;
    }
    let mut out = Vec::new();
    for (&t, &n_frames) in &frames_per_bin {
        for s in 0..n_space {
            let lo = s as f64 * space_bin_m;
            let hi = (lo + space_bin_m).min(lane_length_m);
            let c = counts.get(&(t, s)).copied().unwrap_or(0);
            out.push(SpatioTemporalCell {
                time_of_day_s: (t * tb) as u32,
                time_bin_s,
                location_start_m: lo,
                location_end_m: hi,
                mean_density: density(c, hi - lo) / n_frames as f64,
                vehicle_count: c,
                n_frames,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekdayCell {
    /// 0 = Monday … 6 = Sunday, in local time.
    pub weekday: u32,
    pub time_of_day_s: u32,
    pub mean_density: f64,
    pub n_frames: usize,
}

/// Mean per-frame density by local weekday and time-of-day bin.
pub fn weekday_pivot(
    frames: &[FrameDensity],
    time_bin_s: u32,
    utc_offset_s: i64,
) -> Result<Vec<WeekdayCell>, DensityError> {
    if time_bin_s == 0 {
        return Err(DensityError::InvalidBin);
    }
    let mut acc: BTreeMap<(u32, i64), (f64, usize)> = BTreeMap::new();
    for f in frames {
        let local = f.ts.floor() as i64 + utc_offset_s;
        let day = DateTime::<Utc>::from_timestamp(local, 0)
            .ok_or(DensityError::InvalidTimestamp(f.ts))?
            .weekday()
            .num_days_from_monday();
        let e = acc
            .entry((day, time_of_day(f.ts, utc_offset_s) / time_bin_s as i64))
            .or_insert((0.0, 0));
        e.0 += f.k_veh_per_km;
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|((weekday, t), (sum, n))| WeekdayCell {
            weekday,
            time_of_day_s: (t * time_bin_s as i64) as u32,
            mean_density: sum / n as f64,
            n_frames: n,
        })
        .collect())
}
