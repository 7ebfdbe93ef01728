use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lidar_camera_calib::cli;
use lidar_camera_calib::io::RunConfig;
use lidar_camera_calib::synth::REFERENCE_NOISE_LEVELS_CM;
use lidar_camera_calib::Result;

/// LiDAR-camera extrinsic calibration from checkerboard scans.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `rng_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Paths {
    /// Dataset directory.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset with ground truth.
    Synth {
        /// Dataset directory to create.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        frames: Option<usize>,
        /// Range noise in centimeters.
        #[arg(long)]
        sigma_cm: Option<f64>,
    },
    /// Estimate the extrinsics of a dataset.
    Calibrate {
        #[command(flatten)]
        paths: Paths,
        /// Random subsets per subset size.
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        tracking: bool,
    },
    /// Score a result against ground truth.
    Evaluate {
        /// `scene.json` of a synthetic dataset.
        #[arg(long)]
        gt: PathBuf,
        /// `result.json` written by `calibrate`.
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Calibrate fresh synthetic data at several noise levels.
    Sweep {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Range noise levels in centimeters.
        #[arg(long, value_delimiter = ',', default_values_t = REFERENCE_NOISE_LEVELS_CM)]
        sigmas_cm: Vec<f64>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Run LiDAR board detection alone.
    LidarDetect {
        #[command(flatten)]
        paths: Paths,
        #[arg(long)]
        tracking: bool,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::from_env()?,
    };
    if let Some(seed) = cli.seed {
        config.rng_seed = seed;
    }
    match cli.command {
        Command::Synth { out, frames, sigma_cm } => {
            config.dataset_dir = out.unwrap_or(config.dataset_dir);
            config.synth.frames = frames.unwrap_or(config.synth.frames);
            config.synth.noise_sigma = sigma_cm.map_or(config.synth.noise_sigma, |s| s / 100.0);
            let data = cli::run_synth(&config)?;
            println!("wrote {} frames to {}", data.clouds.len(), config.dataset_dir.display());
        }
        Command::Calibrate { paths, iterations, tracking } => {
            apply_paths(&mut config, paths);
            config.calib.iterations = iterations.unwrap_or(config.calib.iterations);
            config.tracking |= tracking;
            print_json(&cli::run_calibrate(&config)?)?;
        }
        Command::Evaluate { gt, est, out } => {
            config.output_dir = out.unwrap_or(config.output_dir);
            print_json(&cli::run_evaluate(&config, &gt, &est)?)?;
        }
        Command::Sweep { out, sigmas_cm, frames, iterations } => {
            config.output_dir = out.unwrap_or(config.output_dir);
            config.synth.frames = frames.unwrap_or(config.synth.frames);
            config.calib.iterations = iterations.unwrap_or(config.calib.iterations);
            for r in cli::run_sweep(&config, &sigmas_cm)? {
                println!(
                    "sigma {:5.2} cm  EGT_R {:.4} deg  EGT_t {:.4} m  MGE {:.4} m  normal {:.3} deg",
                    r.sigma_cm, r.egt_rot_deg, r.egt_trans_m, r.mge_m, r.normal_err_deg
                );
            }
        }
        Command::LidarDetect { paths, tracking } => {
            apply_paths(&mut config, paths);
            config.tracking |= tracking;
            let s = cli::run_lidar_detect(&config)?;
            println!("{}/{}", s.n_detect, s.n_total);
            for (frame, reason) in &s.failures {
                println!("frame {frame}: {reason}");
            }
        }
    }
    Ok(())
}

fn apply_paths(config: &mut RunConfig, paths: Paths) {
    config.dataset_dir = paths.dataset.unwrap_or(std::mem::take(&mut config.dataset_dir));
    config.output_dir = paths.out.unwrap_or(std::mem::take(&mut config.output_dir));
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
