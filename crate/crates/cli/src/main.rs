mod commands;
mod error;
mod fetch;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::ModelArg;
use error::{CliError, CliResult};

/// Camera calibration and lane-level traffic density tools.
#[derive(Debug, Parser)]
#[command(name = "camdensity", version)]
struct Cli {
    /// TOML configuration; omitted keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Calibrate a camera from vehicle keypoint annotations.
    Calibrate {
        #[arg(long)]
        annotations: PathBuf,
        /// Vehicle model library; the builtin library when omitted.
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Measure marking segments and lane lengths with a calibrated camera.
    Measure {
        /// Calibration or synthetic truth file.
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long)]
        markings: Option<PathBuf>,
        #[arg(long)]
        lanes: Option<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
        /// Per-segment CSV.
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Allocate images across datasets and scenarios, or verify an allocation.
    Mix {
        #[arg(long)]
        manifest: PathBuf,
        /// Allocation JSON, or the constraint report with --verify.
        #[arg(long, short)]
        output: PathBuf,
        /// Allocation table CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Check an existing allocation table CSV instead of solving.
        #[arg(long)]
        verify: Option<PathBuf>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        /// Long-format allocation (or constraint slack) CSV.
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Score detections against ground-truth boxes.
    EvalDetections {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long)]
        iou: Option<f64>,
        /// Precision/recall curve CSV.
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Lane densities per interval from detections.
    Density {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        lanes: PathBuf,
        /// Recomputes lane lengths and enables --grid.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Only use frames of this camera.
        #[arg(long)]
        camera: Option<String>,
        #[arg(long, short)]
        output: PathBuf,
        /// Time-of-day by location grid CSV.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Per-frame density CSV.
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Fit a fundamental diagram to speed-density observations.
    FitFd {
        /// CSV with k_veh_per_km and v_kmh columns.
        #[arg(long, conflicts_with_all = ["density", "speed"])]
        data: Option<PathBuf>,
        /// Density CSV, joined with --speed.
        #[arg(long, requires = "speed")]
        density: Option<PathBuf>,
        /// CSV with camera, lane_id, interval_start_utc and v_kmh columns.
        #[arg(long, requires = "density")]
        speed: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "newell")]
        model: ModelArg,
        #[arg(long, short)]
        output: PathBuf,
        /// Fitted curve CSV.
        #[arg(long)]
        plot_data: Option<PathBuf>,
        #[arg(long, default_value_t = 201)]
        curve_points: usize,
    },
    /// Write a synthetic scene: annotations, models, markings, lanes and truth.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        vehicles: usize,
        #[arg(long, default_value_t = 0.5)]
        noise_px: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Poll a camera snapshot URL and store timestamped frames.
    Fetch {
        #[arg(long)]
        url: String,
        #[arg(long)]
        camera: String,
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long)]
        interval_s: Option<f64>,
        /// Stop after this many polls.
        #[arg(long)]
        max_frames: Option<u64>,
        #[arg(long)]
        max_retries: Option<u32>,
        #[arg(long)]
        backoff_ms: Option<u64>,
        #[arg(long)]
        timeout_s: Option<f64>,
    },
}

fn run(cli: Cli) -> CliResult<String> {
    let config = commands::load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Calibrate {
            annotations,
            models,
            output,
            seed,
        } => commands::calibrate(
            &commands::CalibrateArgs {
                annotations,
                models,
                output,
                seed,
            },
            config,
        ),
        Command::Measure {
            calibration,
            markings,
            lanes,
            output,
            plot_data,
        } => commands::measure(&commands::MeasureArgs {
            calibration,
            markings,
            lanes,
            output,
            plot_data,
        }),
        Command::Mix {
            manifest,
            output,
            csv,
            verify,
            beta,
            gamma,
            plot_data,
        } => commands::mix(
            &commands::MixArgs {
                manifest,
                output,
                csv,
                verify,
                beta,
                gamma,
                plot_data,
            },
            &config,
        ),
        Command::EvalDetections {
            predictions,
            truth,
            output,
            iou,
            plot_data,
        } => commands::eval_detections(
            &commands::EvalArgs {
                predictions,
                truth,
                output,
                iou,
                plot_data,
            },
            &config,
        ),
        Command::Density {
            detections,
            lanes,
            calibration,
            camera,
            output,
            grid,
            plot_data,
        } => commands::density(
            &commands::DensityArgs {
                detections,
                lanes,
                calibration,
                camera,
                output,
                grid,
                plot_data,
            },
            &config,
        ),
        Command::FitFd {
            data,
            density,
            speed,
            model,
            output,
            plot_data,
            curve_points,
        } => commands::fit_fd_cmd(
            &commands::FitArgs {
                data,
                density,
                speed,
                model,
                output,
                plot_data,
                curve_points,
            },
            &config,
        ),
        Command::Synth {
            seed,
            vehicles,
            noise_px,
            out_dir,
        } => commands::synth(&commands::SynthArgs {
            seed,
            vehicles,
            noise_px,
            out_dir,
        }),
        Command::Fetch {
            url,
            camera,
            output_dir,
            interval_s,
            max_frames,
            max_retries,
            backoff_ms,
            timeout_s,
        } => {
            let mut cfg = config.fetch;
            cfg.interval_s = interval_s.unwrap_or(cfg.interval_s);
            cfg.max_retries = max_retries.unwrap_or(cfg.max_retries);
            cfg.backoff_initial_ms = backoff_ms.unwrap_or(cfg.backoff_initial_ms);
            cfg.timeout_s = timeout_s.unwrap_or(cfg.timeout_s);
            fetch::fetch(
                &fetch::FetchArgs {
                    url,
                    camera,
                    output_dir,
                    max_frames,
                },
                &cfg,
            )
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.kind.exit_code())
}
