//! Polls a camera snapshot URL and stores each image under
//! `{output_dir}/{camera}/{utc}.jpg`, with `{output_dir}/index.json` listing
//! every stored frame. Rerunning against the same directory continues the
//! existing index.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail};
use camdensity_core::io::{read_versioned, write_versioned, FetchConfig};
use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Classify, CliError, CliResult, Kind};

const NAME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S%.3fZ";

pub struct FetchArgs {
    pub url: String,
    pub camera: String,
    pub output_dir: PathBuf,
    /// Number of polls; unlimited when `None`.
    pub max_frames: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub camera: String,
    pub utc: String,
    /// Path relative to the output directory.
    pub path: String,
    pub bytes: u64,
    /// Requests made for this frame; 0 when recovered from disk.
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameIndex {
    pub frames: Vec<IndexEntry>,
}

impl FrameIndex {
    fn contains(&self, path: &str) -> bool {
        self.frames.iter().any(|f| f.path == path)
    }
}

fn index_path(dir: &Path) -> PathBuf {
    dir.join("index.json")
}

/// Loads the index and adds frames found on disk but missing from it, such
/// as one stored just before an interrupted index write.
pub fn load_index(dir: &Path, camera: &str) -> CliResult<FrameIndex> {
    let path = index_path(dir);
    let mut index = if path.exists() {
        let f = File::open(&path).input(format!("cannot open {}", path.display()))?;
        read_versioned(BufReader::new(f)).input(format!("frame index {}", path.display()))?
    } else {
        FrameIndex::default()
    };
    let before = index.frames.len();
    index.frames.retain(|f| dir.join(&f.path).exists());
    if index.frames.len() < before {
        log::warn!(
            "dropped {} index entries whose image is missing",
            before - index.frames.len()
        );
    }
    let cam_dir = dir.join(camera);
    if let Ok(entries) = fs::read_dir(&cam_dir) {
        let mut found: Vec<(String, u64)> = entries
            .filter_map(Result::ok)
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let stem = name.strip_suffix(".jpg")?;
                NaiveDateTime::parse_from_str(stem, NAME_FORMAT).ok()?;
                Some((stem.to_string(), e.metadata().ok()?.len()))
            })
            .collect();
        found.sort();
        for (utc, bytes) in found {
            let rel = format!("{camera}/{utc}.jpg");
            if !index.contains(&rel) {
                log::info!("recovered {rel} from disk");
                index.frames.push(IndexEntry {
                    camera: camera.to_string(),
                    utc,
                    path: rel,
                    bytes,
                    attempts: 0,
                });
            }
        }
    }
    index
        .frames
        .sort_by(|a, b| (&a.camera, &a.utc).cmp(&(&b.camera, &b.utc)));
    Ok(index)
}

/// Writes to a temporary file, then renames over the target.
fn write_atomic(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<File>) -> anyhow::Result<()>,
) -> CliResult<()> {
    let tmp = path.with_extension("part");
    let run = || -> anyhow::Result<()> {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    };
    run().input(format!("writing {}", path.display()))
}

fn save_index(dir: &Path, index: &FrameIndex) -> CliResult<()> {
    write_atomic(&index_path(dir), |w| Ok(write_versioned(w, index)?))
}

fn get(agent: &ureq::Agent, url: &str) -> anyhow::Result<Vec<u8>> {
    let mut resp = agent.get(url).call()?;
    let status = resp.status();
    if !status.is_success() {
        bail!("HTTP {}", status.as_u16());
    }
    let body = resp.body_mut().read_to_vec()?;
    if body.is_empty() {
        bail!("empty response body");
    }
    Ok(body)
}

/// Image bytes and the number of requests it took.
fn get_with_retry(
    agent: &ureq::Agent,
    url: &str,
    cfg: &FetchConfig,
) -> anyhow::Result<(Vec<u8>, u32)> {
    let mut delay = Duration::from_millis(cfg.backoff_initial_ms);
    for attempt in 1..=cfg.max_retries + 1 {
        match get(agent, url) {
            Ok(body) => return Ok((body, attempt)),
            Err(e) if attempt <= cfg.max_retries => {
                log::warn!(
                    "attempt {attempt} failed: {e:#}; retrying in {} ms",
                    delay.as_millis()
                );
                thread::sleep(delay);
                delay *= 2;
            }
            Err(e) => return Err(e.context(format!("failed after {attempt} attempts"))),
        }
    }
    Err(anyhow!("no attempt made"))
}

fn check_camera_name(camera: &str) -> CliResult<()> {
    let ok = !camera.is_empty()
        && camera != "."
        && camera != ".."
        && camera
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if ok {
        Ok(())
    } else {
        Err(CliError::input(format!(
            "camera id {camera:?} must be non-empty and use only letters, digits, '-', '_' or '.'"
        )))
    }
}

pub fn fetch(args: &FetchArgs, cfg: &FetchConfig) -> CliResult<String> {
    check_camera_name(&args.camera)?;
    if !(cfg.interval_s > 0.0 && cfg.timeout_s > 0.0) {
        return Err(CliError::input("interval and timeout must be positive"));
    }
    let dir = &args.output_dir;
    fs::create_dir_all(dir.join(&args.camera)).input(format!("cannot create {}", dir.display()))?;
    let mut index = load_index(dir, &args.camera)?;
    save_index(dir, &index)?;
    let agent = ureq::Agent::new_with_config(
        ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_s)))
            .http_status_as_error(false)
            .build(),
    );
    let interval = Duration::from_secs_f64(cfg.interval_s);
    let (mut polls, mut stored, mut failed) = (0u64, 0u64, 0u64);
    loop {
        let started = Instant::now();
        polls += 1;
        match get_with_retry(&agent, &args.url, cfg) {
            Ok((body, attempts)) => {
                let now: DateTime<Utc> = Utc::now();
                let utc = now.format(NAME_FORMAT).to_string();
                let rel = format!("{}/{utc}.jpg", args.camera);
                if index.contains(&rel) {
                    log::info!("{rel} already stored");
                } else {
                    write_atomic(&dir.join(&rel), |w| Ok(w.write_all(&body)?))?;
                    index.frames.push(IndexEntry {
                        camera: args.camera.clone(),
                        utc,
                        path: rel.clone(),
                        bytes: body.len() as u64,
                        attempts,
                    });
                    save_index(dir, &index)?;
                    stored += 1;
                    log::info!("stored {rel} ({} bytes, {attempts} attempts)", body.len());
                }
            }
            Err(e) => {
                failed += 1;
                log::error!("poll {polls}: {e:#}");
            }
        }
        if args.max_frames.is_some_and(|m| polls >= m) {
            break;
        }
        if let Some(rest) = interval.checked_sub(started.elapsed()) {
            thread::sleep(rest);
        }
    }
    if stored == 0 && failed > 0 {
        return Err(CliError::new(
            Kind::Network,
            anyhow!("all {failed} polls of {} failed", args.url),
        ));
    }
    Ok(format!(
        "{polls} polls: {stored} frames stored, {failed} failed; index has {} frames",
        index.frames.len()
    ))
}
