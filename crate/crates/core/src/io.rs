//! File formats: versioned JSON documents, JSON-lines detections, CSV reports
//! and the TOML configuration.

use std::io::{BufRead, Read, Write};

use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset_mixer::{Allocation, DatasetManifest};
use crate::density::{utc_iso, DensityRecord, SpatioTemporalCell};
use crate::detection::{DetectionFrame, LaneGeometry, DEFAULT_CONFIDENCE_MIN};
use crate::fd_fit::FdFit;
use crate::geometry::{CameraParams, ImageSize, Rotation};
use crate::measurement::{ErrorMetrics, GroundSegmentSet};
use crate::mvcalib::{CalibConfig, CalibResult, VehicleAnnotation, VehicleModel};
use crate::optimize::CmaConfig;

/// Version written into every JSON document; newer versions are rejected.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{context}: {message}")]
    Parse { context: String, message: String },
    #[error("schema_version {found} is newer than the supported version {supported}")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("missing schema_version")]
    MissingVersion,
    #[error("line {line}: timestamp {ts} precedes the previous frame of camera {camera}")]
    TimestampOrder {
        line: usize,
        ts: f64,
        camera: String,
    },
    #[error("{0}")]
    Invalid(String),
}

impl IoError {
    fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        IoError::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}

/// Deserializes with the JSON path of the offending field in the error.
fn from_value<T: DeserializeOwned>(value: serde_json::Value, context: &str) -> Result<T, IoError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        IoError::parse(format!("{context} at `{path}`"), e.into_inner())
    })
}

/// Parses a versioned JSON document. The body is everything except
/// `schema_version`.
pub fn read_versioned<T: DeserializeOwned>(reader: impl Read) -> Result<T, IoError> {
    let mut value: serde_json::Value =
        serde_json::from_reader(reader).map_err(|e| IoError::parse("json", e))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| IoError::Invalid("top level must be a JSON object".into()))?;
    let version = obj
        .remove("schema_version")
        .ok_or(IoError::MissingVersion)?;
    let found = version
        .as_u64()
        .and_then(|v| u32::try_from(v).ok())
        .ok_or_else(|| IoError::parse("schema_version", "expected a non-negative integer"))?;
    if found > SCHEMA_VERSION {
        return Err(IoError::UnsupportedVersion {
            found,
            supported: SCHEMA_VERSION,
        });
    }
    from_value(value, "document")
}

pub fn write_versioned<T: Serialize>(writer: impl Write, body: &T) -> Result<(), IoError> {
    let mut value = serde_json::to_value(body).map_err(|e| IoError::parse("serialize", e))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| IoError::Invalid("document body must serialize to an object".into()))?;
    obj.insert("schema_version".into(), SCHEMA_VERSION.into());
    let mut w = writer;
    serde_json::to_writer_pretty(&mut w, &value).map_err(|e| IoError::parse("serialize", e))?;
    writeln!(w)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationsFile {
    pub image_size: ImageSize,
    pub vehicles: Vec<VehicleAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelsFile {
    pub models: Vec<VehicleModel>,
}

/// Camera block of a calibration file: rotation as both matrix and axis-angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub focal_px: f64,
    pub rotation_matrix: [[f64; 3]; 3],
    pub axis_angle: [f64; 3],
    pub translation_m: [f64; 3],
}

impl CameraRecord {
    pub fn from_params(p: &CameraParams) -> Self {
        let m = p.rotation.matrix();
        let theta = p.rotation.axis_angle();
        Self {
            focal_px: p.focal,
            rotation_matrix: std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)])),
            axis_angle: [theta.x, theta.y, theta.z],
            translation_m: p.translation.into(),
        }
    }

    /// Rebuilds the camera from the matrix; the axis-angle copy is informative.
    pub fn to_params(&self) -> Result<CameraParams, IoError> {
        let m = nalgebra::Matrix3::from_fn(|r, c| self.rotation_matrix[r][c]);
        let rotation =
            Rotation::from_matrix(m).map_err(|e| IoError::parse("camera.rotation_matrix", e))?;
        Ok(CameraParams::new(
            self.focal_px,
            rotation,
            Vector3::from(self.translation_m),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub image_size: ImageSize,
    pub camera: CameraRecord,
    pub result: CalibResult,
    /// Settings the calibration ran with.
    #[serde(default)]
    pub config: Config,
}

impl CalibrationFile {
    pub fn new(image_size: ImageSize, result: CalibResult, config: Config) -> Self {
        Self {
            image_size,
            camera: CameraRecord::from_params(&result.params),
            result,
            config,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanesFile {
    pub lanes: Vec<LaneGeometry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkingsFile {
    pub segments: GroundSegmentSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementReport {
    pub segment_lengths_m: Vec<f64>,
    pub true_length_m: Option<f64>,
    pub metrics: Option<ErrorMetrics>,
    pub lane_lengths_m: Vec<(u32, f64)>,
}

/// Detection evaluation summary written by `eval-detections`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub n_images: usize,
    pub iou_threshold: f64,
    pub confidence_min: f64,
    pub average_precision: f64,
    /// Mean AP over IoU 0.50:0.95.
    pub mean_average_precision: f64,
    /// Counts at `confidence_min`.
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
}

pub type ManifestFile = DatasetManifest;
pub type AllocationFile = Allocation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdFitFile {
    pub fit: FdFit,
    pub max_flow_density_veh_per_km: f64,
    pub max_flow_veh_per_h: f64,
}

/// Reads detection frames, one JSON object per line. Blank lines are skipped
/// and timestamps must not decrease within a camera.
pub fn read_detections(reader: impl BufRead) -> Result<Vec<DetectionFrame>, IoError> {
    let mut frames = Vec::new();
    let mut last: std::collections::HashMap<String, f64> = Default::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| IoError::parse(format!("line {lineno}"), e))?;
        let frame: DetectionFrame = from_value(value, &format!("line {lineno}"))?;
        if !frame.ts.is_finite() {
            return Err(IoError::parse(
                format!("line {lineno}"),
                "non-finite timestamp",
            ));
        }
        if let Some(prev) = last.get(&frame.camera) {
            if frame.ts < *prev {
                return Err(IoError::TimestampOrder {
                    line: lineno,
                    ts: frame.ts,
                    camera: frame.camera,
                });
            }
        }
        last.insert(frame.camera.clone(), frame.ts);
        frames.push(frame);
    }
    Ok(frames)
}

pub fn write_detections(writer: impl Write, frames: &[DetectionFrame]) -> Result<(), IoError> {
    let mut w = writer;
    for f in frames {
        serde_json::to_writer(&mut w, f).map_err(|e| IoError::parse("serialize", e))?;
        writeln!(w)?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct DensityRow {
    camera: String,
    lane_id: u32,
    interval_start_utc: String,
    interval_length_s: u64,
    k_veh_per_km: Option<f64>,
    n_frames: usize,
}

pub fn write_density_csv(writer: impl Write, records: &[DensityRecord]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(DensityRow {
            camera: r.camera.clone(),
            lane_id: r.lane_id,
            interval_start_utc: utc_iso(r.interval_start),
            interval_length_s: r.interval_length_s,
            k_veh_per_km: r.k_veh_per_km,
            n_frames: r.n_frames,
        })
        .map_err(|e| IoError::parse("density csv", e))?;
    }
    w.flush()?;
    Ok(())
}

fn parse_utc(s: &str) -> Result<i64, IoError> {
    chrono::DateTime::parse_from_rfc3339(s)
        .map(|t| t.timestamp())
        .map_err(|e| IoError::parse(format!("timestamp `{s}`"), e))
}

pub fn read_density_csv(reader: impl Read) -> Result<Vec<DensityRecord>, IoError> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<DensityRow>().enumerate() {
        let row = row.map_err(|e| IoError::parse(format!("density csv record {}", i + 1), e))?;
        out.push(DensityRecord {
            camera: row.camera,
            lane_id: row.lane_id,
            interval_start: parse_utc(&row.interval_start_utc)?,
            interval_length_s: row.interval_length_s,
            k_veh_per_km: row.k_veh_per_km,
            n_frames: row.n_frames,
        });
    }
    Ok(out)
}

pub fn write_grid_csv(writer: impl Write, cells: &[SpatioTemporalCell]) -> Result<(), IoError> {
    write_rows(writer, cells)
}

pub fn read_grid_csv(reader: impl Read) -> Result<Vec<SpatioTemporalCell>, IoError> {
    read_rows(reader, "grid csv")
}

/// Writes any flat serializable rows with a header.
pub fn write_rows<T: Serialize>(writer: impl Write, rows: &[T]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row).map_err(|e| IoError::parse("csv", e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: DeserializeOwned>(reader: impl Read, context: &str) -> Result<Vec<T>, IoError> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| IoError::parse(format!("{context} record {}", i + 1), e)))
        .collect()
}

/// Allocation table: one row per dataset, one column per scenario, a row
/// total column and a final `Total` row.
pub fn write_allocation_csv(writer: impl Write, a: &Allocation) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["dataset".to_string()];
    header.extend(a.scenarios.iter().cloned());
    header.push("total".into());
    w.write_record(&header)
        .map_err(|e| IoError::parse("allocation csv", e))?;
    let mut col_totals = vec![0u64; a.scenarios.len()];
    for (name, row) in a.datasets.iter().zip(&a.counts) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(u64::to_string));
        rec.push(row.iter().sum::<u64>().to_string());
        row.iter()
            .zip(col_totals.iter_mut())
            .for_each(|(c, t)| *t += c);
        w.write_record(&rec)
            .map_err(|e| IoError::parse("allocation csv", e))?;
    }
    let mut rec = vec!["Total".to_string()];
    rec.extend(col_totals.iter().map(u64::to_string));
    rec.push(col_totals.iter().sum::<u64>().to_string());
    w.write_record(&rec)
        .map_err(|e| IoError::parse("allocation csv", e))?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationTable {
    pub datasets: Vec<String>,
    pub scenarios: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

/// Reads the allocation table back, checking the row and column totals.
pub fn read_allocation_csv(reader: impl Read) -> Result<AllocationTable, IoError> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r
        .headers()
        .map_err(|e| IoError::parse("allocation csv header", e))?
        .clone();
    if header.len() < 3 || &header[0] != "dataset" || &header[header.len() - 1] != "total" {
        return Err(IoError::Invalid(
            "allocation header must be dataset,<scenarios...>,total".into(),
        ));
    }
    let scenarios: Vec<String> = header
        .iter()
        .skip(1)
        .take(header.len() - 2)
        .map(String::from)
        .collect();
    let mut rows: Vec<(String, Vec<u64>)> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| IoError::parse(format!("allocation csv record {}", i + 1), e))?;
        let nums: Vec<u64> = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<u64>())
            .collect::<Result<_, _>>()
            .map_err(|e| IoError::parse(format!("allocation csv record {}", i + 1), e))?;
        if nums.len() != scenarios.len() + 1 {
            return Err(IoError::parse(
                format!("allocation csv record {}", i + 1),
                "wrong column count",
            ));
        }
        let (cells, total) = nums.split_at(scenarios.len());
        if cells.iter().sum::<u64>() != total[0] {
            return Err(IoError::parse(
                format!("allocation csv record {}", i + 1),
                "row total mismatch",
            ));
        }
        rows.push((rec[0].to_string(), nums));
    }
    let (last_name, last) = rows
        .pop()
        .ok_or_else(|| IoError::Invalid("allocation csv has no rows".into()))?;
    if last_name != "Total" {
        return Err(IoError::Invalid(
            "allocation csv must end with a Total row".into(),
        ));
    }
    for s in 0..=scenarios.len() {
        if rows.iter().map(|r| r.1[s]).sum::<u64>() != last[s] {
            return Err(IoError::Invalid(
                "column totals do not match the Total row".into(),
            ));
        }
    }
    Ok(AllocationTable {
        datasets: rows.iter().map(|r| r.0.clone()).collect(),
        scenarios,
        counts: rows
            .into_iter()
            .map(|(_, mut v)| {
                v.pop();
                v
            })
            .collect(),
    })
}

/// Paired density/speed observation for fundamental-diagram fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedDensityRow {
    pub k_veh_per_km: f64,
    pub v_kmh: f64,
}

/// Mean speed of one lane and interval from an external source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedRow {
    pub camera: String,
    pub lane_id: u32,
    pub interval_start_utc: String,
    pub v_kmh: f64,
}

/// Pairs density records with speeds of the same camera, lane and interval.
/// Gaps and intervals without a speed are dropped.
pub fn join_speed_density(density: &[DensityRecord], speeds: &[SpeedRow]) -> Vec<SpeedDensityRow> {
    let index: std::collections::HashMap<(&str, u32, &str), f64> = speeds
        .iter()
        .map(|s| {
            (
                (s.camera.as_str(), s.lane_id, s.interval_start_utc.as_str()),
                s.v_kmh,
            )
        })
        .collect();
    density
        .iter()
        .filter_map(|r| {
            let k = r.k_veh_per_km?;
            let start = r.interval_start_utc();
            let v = *index.get(&(r.camera.as_str(), r.lane_id, start.as_str()))?;
            Some(SpeedDensityRow {
                k_veh_per_km: k,
                v_kmh: v,
            })
        })
        .collect()
}

/// One cell of a per-lane spatio-temporal grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneGridRow {
    pub camera: String,
    pub lane_id: u32,
    pub time_of_day_s: u32,
    pub time_bin_s: u32,
    pub location_start_m: f64,
    pub location_end_m: f64,
    pub mean_density: f64,
    pub vehicle_count: usize,
    pub n_frames: usize,
}

impl LaneGridRow {
    pub fn new(camera: &str, lane_id: u32, c: &SpatioTemporalCell) -> Self {
        Self {
            camera: camera.to_string(),
            lane_id,
            time_of_day_s: c.time_of_day_s,
            time_bin_s: c.time_bin_s,
            location_start_m: c.location_start_m,
            location_end_m: c.location_end_m,
            mean_density: c.mean_density,
            vehicle_count: c.vehicle_count,
            n_frames: c.n_frames,
        }
    }
}

/// Point of a precision/recall curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrRow {
    pub confidence: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdCurveRow {
    pub k_veh_per_km: f64,
    pub v_kmh: f64,
    pub q_veh_per_h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixerConfig {
    pub beta: f64,
    pub gamma: f64,
}

impl Default for MixerConfig {
    fn default() -> Self {
        Self {
            beta: 0.25,
            gamma: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub confidence_min: f64,
    pub iou_threshold: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            confidence_min: DEFAULT_CONFIDENCE_MIN,
            iou_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    pub interval_s: u64,
    pub time_bin_s: u32,
    pub space_bin_m: f64,
    pub utc_offset_s: i64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            interval_s: crate::density::DEFAULT_INTERVAL_S,
            time_bin_s: 900,
            space_bin_m: 10.0,
            utc_offset_s: 8 * 3600,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FetchConfig {
    /// Snapshot cadence of the camera feed.
    pub interval_s: f64,
    pub max_retries: u32,
    pub backoff_initial_ms: u64,
    pub timeout_s: f64,
}

impl Default for FetchConfig {
    fn default() -> Self {
        Self {
            interval_s: 120.0,
            max_retries: 3,
            backoff_initial_ms: 500,
            timeout_s: 30.0,
        }
    }
}

/// Every tunable constant with its default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    pub calibration: CalibConfig,
    pub mixer: MixerConfig,
    pub detection: DetectionConfig,
    pub density: DensityConfig,
    /// Optimizer for fundamental-diagram fitting.
    pub fd_fit: CmaConfig,
    pub fetch: FetchConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            calibration: CalibConfig::default(),
            mixer: MixerConfig::default(),
            detection: DetectionConfig::default(),
            density: DensityConfig::default(),
            fd_fit: CmaConfig::with_budget(20_000, 0),
            fetch: FetchConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(s: &str) -> Result<Self, IoError> {
        let cfg: Config = toml::from_str(s).map_err(|e| IoError::parse("config", e.message()))?;
        if cfg.schema_version > SCHEMA_VERSION {
            return Err(IoError::UnsupportedVersion {
                found: cfg.schema_version,
                supported: SCHEMA_VERSION,
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, IoError> {
        toml::to_string_pretty(self).map_err(|e| IoError::parse("config", e))
    }

    pub fn validate(&self) -> Result<(), IoError> {
        let c = &self.calibration;
        let checks = [
            (
                c.focal_default > 0.0,
                "calibration.focal_default must be positive",
            ),
            (c.alpha >= 0.0, "calibration.alpha must be non-negative"),
            (c.tau.is_finite(), "calibration.tau must be finite"),
            (
                c.stage2.max_evaluations > 0,
                "calibration.stage2.max_evaluations must be positive",
            ),
            (
                c.stage3.max_evaluations > 0,
                "calibration.stage3.max_evaluations must be positive",
            ),
            (
                (0.0..=1.0).contains(&self.mixer.beta),
                "mixer.beta must lie in [0, 1]",
            ),
            (
                (0.0..=1.0).contains(&self.mixer.gamma),
                "mixer.gamma must lie in [0, 1]",
            ),
            (
                (0.0..=1.0).contains(&self.detection.iou_threshold),
                "detection.iou_threshold must lie in [0, 1]",
            ),
            (
                self.density.interval_s > 0,
                "density.interval_s must be positive",
            ),
            (
                self.density.time_bin_s > 0,
                "density.time_bin_s must be positive",
            ),
            (
                self.density.space_bin_m > 0.0,
                "density.space_bin_m must be positive",
            ),
            (
                self.fd_fit.max_evaluations > 0,
                "fd_fit.max_evaluations must be positive",
            ),
            (
                self.fetch.interval_s > 0.0,
                "fetch.interval_s must be positive",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(IoError::Invalid((*msg).into())),
            None => Ok(()),
        }
    }
}
