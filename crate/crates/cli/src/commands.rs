use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use camdensity_core::dataset_mixer::{
    solve_allocation, verify_allocation, DatasetManifest, MixerError,
};
use camdensity_core::density::{
    aggregate, density_from_counts, st_grid, FrameDensity, VehicleObservation,
};
use camdensity_core::detection::{
    average_precision_multi, count_per_lane, match_detections, mean_average_precision,
    precision_recall, precision_recall_curve, BoundingBox, DetectionFrame, LaneGeometry, LaneSet,
};
use camdensity_core::fd_fit::{fit_fd, flow, max_flow, FdError, FdModel};
use camdensity_core::geometry::pixel_to_plane;
use camdensity_core::io::{
    self, join_speed_density, read_versioned, write_versioned, AllocationFile, AnnotationsFile,
    CalibrationFile, CameraRecord, Config, DetectionReport, FdCurveRow, FdFitFile, LaneGridRow,
    LanesFile, MarkingsFile, MeasurementReport, ModelsFile, PrRow, SpeedDensityRow, SpeedRow,
};
use camdensity_core::measurement::{lane_length, segment_lengths, ErrorMetrics, MeasurementError};
use camdensity_core::mvcalib::{builtin_models, run_pipeline, CalibError};
use camdensity_core::synth::{generate_scene, PlacedVehicle, SceneSpec};
use camdensity_core::{CameraParams, ImageSize, Point3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Classify, CliError, CliResult, Kind};

pub fn load_config(path: Option<&Path>) -> CliResult<Config> {
    match path {
        None => Ok(Config::default()),
        Some(p) => {
            let text =
                fs::read_to_string(p).input(format!("cannot read config {}", p.display()))?;
            Config::from_toml(&text).input(format!("config {}", p.display()))
        }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> CliResult<T> {
    let f = File::open(path).input(format!("cannot open {what} {}", path.display()))?;
    read_versioned(BufReader::new(f)).input(format!("{what} {}", path.display()))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).input(format!("cannot create {}", dir.display()))?;
    }
    let f = File::create(path).input(format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(path: &Path, body: &T) -> CliResult<()> {
    let mut w = create(path)?;
    write_versioned(&mut w, body).input(format!("writing {}", path.display()))?;
    w.flush().input(format!("writing {}", path.display()))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = create(path)?;
    io::write_rows(&mut w, rows).input(format!("writing {}", path.display()))?;
    w.flush().input(format!("writing {}", path.display()))
}

fn read_csv<T: DeserializeOwned>(path: &Path, what: &str) -> CliResult<Vec<T>> {
    let f = File::open(path).input(format!("cannot open {what} {}", path.display()))?;
    io::read_rows(BufReader::new(f), &path.display().to_string())
        .input(format!("{what} {}", path.display()))
}

fn read_frames(path: &Path, what: &str) -> CliResult<Vec<DetectionFrame>> {
    let f = File::open(path).input(format!("cannot open {what} {}", path.display()))?;
    io::read_detections(BufReader::new(f)).input(format!("{what} {}", path.display()))
}

/// Image size and camera; accepted from calibration and synth truth files.
#[derive(Debug, Deserialize)]
struct CameraFile {
    image_size: ImageSize,
    camera: CameraRecord,
}

fn read_camera(path: &Path) -> CliResult<(CameraParams, ImageSize)> {
    let file: CameraFile = read_json(path, "calibration")?;
    let params = file
        .camera
        .to_params()
        .input(format!("calibration {}", path.display()))?;
    Ok((params, file.image_size))
}

pub struct CalibrateArgs {
    pub annotations: PathBuf,
    pub models: Option<PathBuf>,
    pub output: PathBuf,
    pub seed: Option<u64>,
}

fn calib_kind(e: &CalibError) -> Kind {
    match e {
        CalibError::Optimize(_) | CalibError::Geometry(_) => Kind::Numeric,
        _ => Kind::Input,
    }
}

pub fn calibrate(args: &CalibrateArgs, mut config: Config) -> CliResult<String> {
    let ann: AnnotationsFile = read_json(&args.annotations, "annotations")?;
    let models = match &args.models {
        Some(p) => read_json::<ModelsFile>(p, "model library")?.models,
        None => builtin_models(),
    };
    if let Some(seed) = args.seed {
        config.calibration.seed = seed;
    }
    let result = run_pipeline(&ann.vehicles, &models, ann.image_size, &config.calibration)
        .map_err(|e| {
            CliError::new(
                calib_kind(&e),
                anyhow::Error::new(e).context("calibration failed"),
            )
        })?;
    for w in &result.warnings {
        log::warn!("{w}");
    }
    let summary = format!(
        "f = {:.2} px, anchor vehicle {} ({}), L_f = {:.6}",
        result.params.focal, result.anchor_index, result.anchor_model, result.final_loss
    );
    write_json(
        &args.output,
        &CalibrationFile::new(ann.image_size, result, config),
    )?;
    Ok(summary)
}

pub struct MeasureArgs {
    pub calibration: PathBuf,
    pub markings: Option<PathBuf>,
    pub lanes: Option<PathBuf>,
    pub output: PathBuf,
    pub plot_data: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRow {
    pub line: usize,
    pub segment: usize,
    pub length_m: f64,
    pub true_length_m: Option<f64>,
    pub ape_percent: Option<f64>,
}

fn measure_kind(e: &MeasurementError) -> Kind {
    match e {
        MeasurementError::Geometry(_) => Kind::Numeric,
        _ => Kind::Input,
    }
}

fn measure_err(e: MeasurementError, what: &str) -> CliError {
    CliError::new(
        measure_kind(&e),
        anyhow::Error::new(e).context(what.to_string()),
    )
}

pub fn measure(args: &MeasureArgs) -> CliResult<String> {
    if args.markings.is_none() && args.lanes.is_none() {
        return Err(CliError::input(
            "nothing to measure: pass --markings and/or --lanes",
        ));
    }
    let (params, size) = read_camera(&args.calibration)?;
    let mut report = MeasurementReport {
        segment_lengths_m: Vec::new(),
        true_length_m: None,
        metrics: None,
        lane_lengths_m: Vec::new(),
    };
    let mut rows = Vec::new();
    if let Some(p) = &args.markings {
        let m: MarkingsFile = read_json(p, "markings")?;
        let lengths = segment_lengths(&m.segments, &params, size)
            .map_err(|e| measure_err(e, "marking segments"))?;
        let truth = m.segments.true_length_m;
        let mut idx = lengths.iter();
        for (line, pts) in m.segments.lines.iter().enumerate() {
            for segment in 0..pts.len().saturating_sub(1) {
                let length_m = *idx.next().expect("one length per segment");
                rows.push(SegmentRow {
                    line,
                    segment,
                    length_m,
                    true_length_m: truth,
                    ape_percent: truth
                        .filter(|t| *t != 0.0)
                        .map(|t| 100.0 * ((length_m - t) / t).abs()),
                });
            }
        }
        report.metrics = truth.map(|t| ErrorMetrics::from_pairs(lengths.iter().map(|l| (*l, t))));
        report.true_length_m = truth;
        report.segment_lengths_m = lengths;
    }
    if let Some(p) = &args.lanes {
        let lanes: LanesFile = read_json(p, "lanes")?;
        for lane in &lanes.lanes {
            let l = lane_length(lane, &params, size)
                .map_err(|e| measure_err(e, &format!("lane {}", lane.lane_id)))?;
            report.lane_lengths_m.push((lane.lane_id, l));
        }
    }
    write_json(&args.output, &report)?;
    if let Some(p) = &args.plot_data {
        write_csv(p, &rows)?;
    }
    Ok(match &report.metrics {
        Some(m) => format!(
            "{} segments: RMSE {:.4} m, MAE {:.4} m, MAPE {:.3}%",
            rows.len(),
            m.rmse,
            m.mae,
            m.mape_percent
        ),
        None => format!(
            "{} segments, {} lanes measured",
            rows.len(),
            report.lane_lengths_m.len()
        ),
    })
}

pub struct MixArgs {
    pub manifest: PathBuf,
    pub output: PathBuf,
    pub csv: Option<PathBuf>,
    pub verify: Option<PathBuf>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub plot_data: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationRow {
    pub dataset: String,
    pub scenario: String,
    pub continuous: Option<f64>,
    pub count: u64,
}

fn mixer_err(e: MixerError) -> CliError {
    let kind = match e {
        MixerError::Optimize(_) => Kind::Numeric,
        _ => Kind::Input,
    };
    CliError::new(kind, anyhow::Error::new(e).context("dataset mixer"))
}

/// Reorders an allocation table to the manifest's dataset and scenario order.
fn align_table(table: io::AllocationTable, manifest: &DatasetManifest) -> CliResult<Vec<Vec<u64>>> {
    let find = |names: &[String], name: &str, what: &str| {
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| CliError::input(format!("allocation has no {what} {name:?}")))
    };
    if table.datasets.len() != manifest.datasets.len()
        || table.scenarios.len() != manifest.scenarios.len()
    {
        return Err(CliError::input(format!(
            "allocation is {}x{} but the manifest is {}x{}",
            table.datasets.len(),
            table.scenarios.len(),
            manifest.datasets.len(),
            manifest.scenarios.len()
        )));
    }
    manifest
        .datasets
        .iter()
        .map(|d| {
            let m = find(&table.datasets, &d.name, "dataset")?;
            manifest
                .scenarios
                .iter()
                .map(|s| Ok(table.counts[m][find(&table.scenarios, s, "scenario")?]))
                .collect()
        })
        .collect()
}

pub fn mix(args: &MixArgs, config: &Config) -> CliResult<String> {
    let manifest: DatasetManifest = read_json(&args.manifest, "manifest")?;
    let beta = args.beta.unwrap_or(config.mixer.beta);
    let gamma = args.gamma.unwrap_or(config.mixer.gamma);
    if let Some(p) = &args.verify {
        let f = File::open(p).input(format!("cannot open allocation {}", p.display()))?;
        let table = io::read_allocation_csv(BufReader::new(f))
            .input(format!("allocation {}", p.display()))?;
        let counts = align_table(table, &manifest)?;
        let q: Vec<Vec<f64>> = counts
            .iter()
            .map(|r| r.iter().map(|c| *c as f64).collect())
            .collect();
        let report = verify_allocation(&q, &manifest, beta, gamma, 0.0).map_err(mixer_err)?;
        write_json(&args.output, &report)?;
        if let Some(pd) = &args.plot_data {
            write_csv(pd, &report.constraints)?;
        }
        return Ok(format!(
            "{} constraints checked, {} violated",
            report.constraints.len(),
            report.violations
        ));
    }
    let alloc: AllocationFile = solve_allocation(&manifest, beta, gamma).map_err(mixer_err)?;
    write_json(&args.output, &alloc)?;
    if let Some(p) = &args.csv {
        let mut w = create(p)?;
        io::write_allocation_csv(&mut w, &alloc).input(format!("writing {}", p.display()))?;
        w.flush().input(format!("writing {}", p.display()))?;
    }
    if let Some(p) = &args.plot_data {
        let mut rows = Vec::new();
        for (m, d) in alloc.datasets.iter().enumerate() {
            for (s, sc) in alloc.scenarios.iter().enumerate() {
                rows.push(AllocationRow {
                    dataset: d.clone(),
                    scenario: sc.clone(),
                    continuous: Some(alloc.q[m][s]),
                    count: alloc.counts[m][s],
                });
            }
        }
        write_csv(p, &rows)?;
    }
    Ok(format!(
        "{} images allocated (LP optimum {:.3})",
        alloc.total_count, alloc.objective
    ))
}

pub struct EvalArgs {
    pub predictions: PathBuf,
    pub truth: PathBuf,
    pub output: PathBuf,
    pub iou: Option<f64>,
    pub plot_data: Option<PathBuf>,
}

/// Pairs prediction and truth frames by camera and timestamp; a frame present
/// in only one file is paired with an empty box list.
fn pair_frames(
    preds: Vec<DetectionFrame>,
    truths: Vec<DetectionFrame>,
) -> Vec<(Vec<BoundingBox>, Vec<BoundingBox>)> {
    let mut images: BTreeMap<(String, u64), (Vec<BoundingBox>, Vec<BoundingBox>)> = BTreeMap::new();
    for f in preds {
        images
            .entry((f.camera, f.ts.to_bits()))
            .or_default()
            .0
            .extend(f.boxes);
    }
    for f in truths {
        images
            .entry((f.camera, f.ts.to_bits()))
            .or_default()
            .1
            .extend(f.boxes);
    }
    images.into_values().collect()
}

pub fn eval_detections(args: &EvalArgs, config: &Config) -> CliResult<String> {
    let iou_threshold = args.iou.unwrap_or(config.detection.iou_threshold);
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(CliError::input(format!(
            "IoU threshold {iou_threshold} must lie in (0, 1]"
        )));
    }
    let preds = read_frames(&args.predictions, "predictions")?;
    let truths = read_frames(&args.truth, "ground truth")?;
    let images = pair_frames(preds, truths);
    let conf_min = config.detection.confidence_min;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, t) in &images {
        let kept: Vec<BoundingBox> = p
            .iter()
            .filter(|b| b.confidence >= conf_min)
            .cloned()
            .collect();
        let m = match_detections(&kept, t, iou_threshold);
        tp += m.tp;
        fp += m.fp;
        fn_ += m.fn_;
    }
    let (precision, recall) = precision_recall(tp, fp, fn_);
    let report = DetectionReport {
        n_images: images.len(),
        iou_threshold,
        confidence_min: conf_min,
        average_precision: average_precision_multi(&images, iou_threshold),
        mean_average_precision: mean_average_precision(&images),
        tp,
        fp,
        fn_,
        precision,
        recall,
    };
    write_json(&args.output, &report)?;
    if let Some(p) = &args.plot_data {
        let rows: Vec<PrRow> = precision_recall_curve(&images, iou_threshold)
            .into_iter()
            .map(|(confidence, precision, recall)| PrRow {
                confidence,
                precision,
                recall,
            })
            .collect();
        write_csv(p, &rows)?;
    }
    Ok(format!(
        "AP@{iou_threshold} = {:.4}, mAP@[.5:.95] = {:.4}, precision {precision:.3}, recall {recall:.3}",
        report.average_precision, report.mean_average_precision
    ))
}

pub struct DensityArgs {
    pub detections: PathBuf,
    pub lanes: PathBuf,
    pub calibration: Option<PathBuf>,
    pub camera: Option<String>,
    pub output: PathBuf,
    pub grid: Option<PathBuf>,
    pub plot_data: Option<PathBuf>,
}

/// Distance along a lane's ground centerline of the point closest to `ground`.
fn position_along(ground: &Point3, centerline: &[Point3]) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    let mut travelled = 0.0;
    for w in centerline.windows(2) {
        let d = w[1] - w[0];
        let len = d.norm();
        let t = if len > 0.0 {
            ((ground - w[0]).dot(&d) / (len * len)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let dist = (ground - (w[0] + d * t)).norm();
        if dist < best.0 {
            best = (dist, travelled + t * len);
        }
        travelled += len;
    }
    best.1
}

fn ground_centerline(
    lane: &LaneGeometry,
    params: &CameraParams,
    size: ImageSize,
) -> CliResult<Vec<Point3>> {
    lane.centerline
        .iter()
        .map(|p| pixel_to_plane(p, params, size, 0.0))
        .collect::<Result<_, _>>()
        .numeric(format!(
            "lane {} centerline does not meet the ground",
            lane.lane_id
        ))
}

pub fn density(args: &DensityArgs, config: &Config) -> CliResult<String> {
    let mut frames = read_frames(&args.detections, "detections")?;
    if let Some(cam) = &args.camera {
        frames.retain(|f| &f.camera == cam);
    }
    let lanes_file: LanesFile = read_json(&args.lanes, "lanes")?;
    let camera = args.calibration.as_deref().map(read_camera).transpose()?;
    let mut geoms = lanes_file.lanes;
    if let Some((params, size)) = &camera {
        for lane in &mut geoms {
            lane.length_m = lane_length(lane, params, size.to_owned())
                .map_err(|e| measure_err(e, &format!("lane {}", lane.lane_id)))?;
        }
    }
    let lanes = LaneSet::new(geoms.clone()).input(format!("lanes {}", args.lanes.display()))?;
    let conf_min = config.detection.confidence_min;
    let mut per_frame = Vec::new();
    for f in &frames {
        let counts = count_per_lane(f, &lanes, conf_min);
        let k = density_from_counts(&counts, &geoms).input("density")?;
        per_frame.extend(k.into_iter().map(|(lane_id, k_veh_per_km)| FrameDensity {
            ts: f.ts,
            camera: f.camera.clone(),
            lane_id,
            k_veh_per_km,
        }));
    }
    let records = aggregate(&per_frame, config.density.interval_s).input("density aggregation")?;
    let mut w = create(&args.output)?;
    io::write_density_csv(&mut w, &records).input(format!("writing {}", args.output.display()))?;
    w.flush()
        .input(format!("writing {}", args.output.display()))?;
    if let Some(p) = &args.plot_data {
        write_csv(p, &per_frame)?;
    }
    if let Some(p) = &args.grid {
        let (params, size) = camera.as_ref().ok_or_else(|| {
            CliError::input("--grid needs --calibration to place vehicles along lanes")
        })?;
        let d = &config.density;
        let mut by_camera: BTreeMap<&str, Vec<&DetectionFrame>> = BTreeMap::new();
        for f in &frames {
            by_camera.entry(f.camera.as_str()).or_default().push(f);
        }
        let mut rows = Vec::new();
        for lane in lanes.lanes() {
            let centerline = ground_centerline(lane, params, *size)?;
            for (cam, cam_frames) in &by_camera {
                let ts: Vec<f64> = cam_frames.iter().map(|f| f.ts).collect();
                let mut obs = Vec::new();
                for f in cam_frames {
                    for b in f.boxes.iter().filter(|b| b.confidence >= conf_min) {
                        if lanes.assign(b) != Some(lane.lane_id) {
                            continue;
                        }
                        match pixel_to_plane(&b.center(), params, *size, 0.0) {
                            Ok(g) => obs.push(VehicleObservation {
                                ts: f.ts,
                                y_m: position_along(&g, &centerline),
                            }),
                            Err(e) => log::warn!(
                                "frame {} camera {cam}: box not on the ground: {e}",
                                f.ts
                            ),
                        }
                    }
                }
                let cells = st_grid(
                    &ts,
                    &obs,
                    lane.length_m,
                    d.time_bin_s,
                    d.space_bin_m,
                    d.utc_offset_s,
                )
                .input(format!("grid for lane {}", lane.lane_id))?;
                rows.extend(cells.iter().map(|c| LaneGridRow::new(cam, lane.lane_id, c)));
            }
        }
        write_csv(p, &rows)?;
    }
    let gaps = records.iter().filter(|r| r.is_gap()).count();
    Ok(format!(
        "{} frames, {} interval records ({gaps} gaps)",
        frames.len(),
        records.len()
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelArg {
    Newell,
    Greenshields,
}

impl From<ModelArg> for FdModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Newell => FdModel::Newell,
            ModelArg::Greenshields => FdModel::Greenshields,
        }
    }
}

pub struct FitArgs {
    pub data: Option<PathBuf>,
    pub density: Option<PathBuf>,
    pub speed: Option<PathBuf>,
    pub model: ModelArg,
    pub output: PathBuf,
    pub plot_data: Option<PathBuf>,
    pub curve_points: usize,
}

fn fd_err(e: FdError) -> CliError {
    let kind = match e {
        FdError::Optimize(_) => Kind::Numeric,
        _ => Kind::Input,
    };
    CliError::new(
        kind,
        anyhow::Error::new(e).context("fundamental diagram fit"),
    )
}

pub fn fit_fd_cmd(args: &FitArgs, config: &Config) -> CliResult<String> {
    let rows: Vec<SpeedDensityRow> = match (&args.data, &args.density, &args.speed) {
        (Some(d), None, None) => read_csv(d, "speed-density data")?,
        (None, Some(k), Some(v)) => {
            let f = File::open(k).input(format!("cannot open density {}", k.display()))?;
            let records = io::read_density_csv(BufReader::new(f))
                .input(format!("density {}", k.display()))?;
            let speeds: Vec<SpeedRow> = read_csv(v, "speeds")?;
            join_speed_density(&records, &speeds)
        }
        _ => {
            return Err(CliError::input(
                "pass either --data, or both --density and --speed",
            ))
        }
    };
    let data: Vec<(f64, f64)> = rows.iter().map(|r| (r.k_veh_per_km, r.v_kmh)).collect();
    let fit = fit_fd(&data, args.model.into(), &config.fd_fit).map_err(fd_err)?;
    let (k_star, q_star) = max_flow(&fit.params).map_err(fd_err)?;
    if let Some(p) = &args.plot_data {
        let n = args.curve_points.max(2);
        let k_j = fit.params.k_j_veh_per_km;
        let curve = (0..n)
            .map(|i| {
                let k = k_j * i as f64 / (n - 1) as f64;
                let v = fit.params.speed(k)?;
                Ok(FdCurveRow {
                    k_veh_per_km: k,
                    v_kmh: v,
                    q_veh_per_h: flow(k, v),
                })
            })
            .collect::<Result<Vec<_>, FdError>>()
            .map_err(fd_err)?;
        write_csv(p, &curve)?;
    }
    let summary = format!(
        "{} points: v_f = {:.3} km/h, k_j = {:.3} veh/km, max flow {:.2} veh/h at k = {:.2}",
        fit.n_points, fit.params.v_f_kmh, fit.params.k_j_veh_per_km, q_star, k_star
    );
    write_json(
        &args.output,
        &FdFitFile {
            fit,
            max_flow_density_veh_per_km: k_star,
            max_flow_veh_per_h: q_star,
        },
    )?;
    Ok(summary)
}

pub struct SynthArgs {
    pub seed: u64,
    pub vehicles: usize,
    pub noise_px: f64,
    pub out_dir: PathBuf,
}

/// Ground truth of a synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub seed: u64,
    pub noise_px: f64,
    pub image_size: ImageSize,
    pub camera: CameraRecord,
    pub vehicles: Vec<PlacedVehicle>,
    pub marking_points_world: Vec<Vec<Point3>>,
}

pub fn synth(args: &SynthArgs) -> CliResult<String> {
    let models = builtin_models();
    let scene = generate_scene(
        args.seed,
        args.vehicles,
        &models,
        &SceneSpec::default(),
        args.noise_px,
    )
    .input("scene generation")?;
    let dir = &args.out_dir;
    write_json(
        &dir.join("annotations.json"),
        &AnnotationsFile {
            image_size: scene.image_size,
            vehicles: scene.annotations.clone(),
        },
    )?;
    write_json(
        &dir.join("models.json"),
        &ModelsFile {
            models: models.clone(),
        },
    )?;
    write_json(
        &dir.join("markings.json"),
        &MarkingsFile {
            segments: scene.markings.clone(),
        },
    )?;
    write_json(
        &dir.join("lanes.json"),
        &LanesFile {
            lanes: scene.lanes.clone(),
        },
    )?;
    write_json(
        &dir.join("truth.json"),
        &SynthTruth {
            seed: scene.seed,
            noise_px: args.noise_px,
            image_size: scene.image_size,
            camera: CameraRecord::from_params(&scene.camera),
            vehicles: scene.vehicles.clone(),
            marking_points_world: scene.marking_points_world.clone(),
        },
    )?;
    let frame = DetectionFrame {
        ts: 0.0,
        camera: "synth".into(),
        boxes: scene.ground_boxes(&models),
    };
    let mut w = create(&dir.join("boxes.jsonl"))?;
    io::write_detections(&mut w, &[frame]).input("writing boxes.jsonl")?;
    w.flush().input("writing boxes.jsonl")?;
    Ok(format!(
        "scene {} with {} vehicles, f = {:.2} px, written to {}",
        args.seed,
        scene.vehicles.len(),
        scene.camera.focal,
        dir.display()
    ))
}
