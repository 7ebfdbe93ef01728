//! Commands behind the `lcalib` binary.
//!
//! Each command reads its inputs from a [`RunConfig`], writes its outputs
//! below `output_dir` (or `dataset_dir` for `synth`) and returns what it
//! wrote. Given the same config and seed every output is byte-identical.

use std::path::Path;

use crate::calib::{calibrate, extract_frames, DetectionSummary, FrameFeatures};
use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::io::{
    load_dataset, read_json, sweep_svg, write_dataset, write_json, write_sweep_csv, Dataset, DetectionDump,
    ResultFile, RunConfig, SceneFile, SweepRow, RESULT_FILE,
};
use crate::lidar::{extract_lidar_features, BoardSpec, TrackingState};
use crate::metrics::{egt, normal_angle_error, MetricReport};
use crate::synth::{make_reference_simulation, SceneConfig, SimDataset};

pub const FEATURES_DIR: &str = "features";
pub const DETECTIONS_DIR: &str = "detections";
pub const SUMMARY_FILE: &str = "summary.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_SVG: &str = "sweep.svg";

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Board and camera from the config, else from the dataset's scene file.
fn sensors(config: &RunConfig, scene: Option<&SceneFile>) -> Result<(BoardSpec, CameraIntrinsics)> {
    let board = config.board.or_else(|| scene.map(|s| s.scene.board));
    let camera = config.camera.or_else(|| scene.map(|s| s.scene.camera));
    match (board, camera) {
        (Some(b), Some(c)) => Ok((b, c)),
        _ => Err(Error::Config(
            "board and camera must be set in the config when the dataset has no scene.json".into(),
        )),
    }
}

fn features(config: &RunConfig, data: &Dataset) -> Result<(Vec<FrameFeatures>, DetectionSummary)> {
    let (board, camera) = sensors(config, data.scene.as_ref())?;
    let lidar = config.lidar_config(data.scene.as_ref().map(|s| s.noise.depth_sigma));
    Ok(extract_frames(
        &data.clouds,
        &data.corners,
        &board,
        &camera,
        &lidar,
        config.edge_pitch,
        config.tracking,
    ))
}

/// Angle between each extracted LiDAR normal and the true board plane (deg).
pub fn normal_errors(frames: &[FrameFeatures], scene: &SceneConfig) -> Vec<f64> {
    frames
        .iter()
        .filter(|f| f.frame_id < scene.board_poses.len())
        .map(|f| normal_angle_error(&f.lidar.plane.normal, &scene.lidar_plane(f.frame_id).0))
        .collect()
}

/// Renders `synth.frames` frames at `synth.noise_sigma` into `dataset_dir`.
pub fn run_synth(config: &RunConfig) -> Result<SimDataset> {
    config.validate()?;
    let data = make_reference_simulation(config.synth.frames, config.synth.noise_sigma, config.rng_seed);
    write_dataset(&config.dataset_dir, &data)?;
    Ok(data)
}

/// Calibrates the dataset; writes `result.json` and one feature dump per
/// detected frame under `features/`.
pub fn run_calibrate(config: &RunConfig) -> Result<ResultFile> {
    config.validate()?;
    config.require_dataset()?;
    let data = load_dataset(&config.dataset_dir)?;
    let (frames, summary) = features(config, &data)?;
    let noise = data.scene.as_ref().map(|s| s.noise.depth_sigma);
    let result = calibrate(&frames, &config.calib_config(noise))?;
    let ids: Vec<usize> = frames.iter().map(|f| f.frame_id).collect();
    let file = ResultFile::new(&result, &summary, &ids);

    let dumps = config.output_dir.join(FEATURES_DIR);
    create_dir(&dumps)?;
    for f in &frames {
        write_json(dumps.join(format!("frame_{:04}.json", f.frame_id)), f)?;
    }
    write_json(config.output_dir.join(RESULT_FILE), &file)?;
    Ok(file)
}

/// Scores `est` against the ground truth in `gt` on the frames of the
/// dataset holding `gt`; writes `metrics.json`.
pub fn run_evaluate(config: &RunConfig, gt: &Path, est: &Path) -> Result<MetricReport> {
    config.validate()?;
    let scene: SceneFile = read_json(gt)?;
    let result: ResultFile = read_json(est)?;
    let dir = gt.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut data = load_dataset(dir)?;
    data.scene = Some(scene.clone());
    let (frames, _) = features(config, &data)?;
    let mut report = MetricReport::evaluate(&result.extrinsics, &frames, Some(&scene.scene.extrinsics_gt));
    report.normal_angle_errors = Some(normal_errors(&frames, &scene.scene));
    create_dir(&config.output_dir)?;
    write_json(config.output_dir.join(METRICS_FILE), &report)?;
    Ok(report)
}

/// One sweep level: fresh data at `sigma_m`, extraction, calibration.
pub fn sweep_level(config: &RunConfig, sigma_m: f64) -> Result<SweepRow> {
    let data = make_reference_simulation(config.synth.frames, sigma_m, config.rng_seed);
    let (board, camera) = (data.scene.board, data.scene.camera);
    let lidar = config.lidar_config(Some(sigma_m));
    let (frames, _) = extract_frames(
        &data.clouds,
        &data.corners,
        &board,
        &camera,
        &lidar,
        config.edge_pitch,
        config.tracking,
    );
    let result = calibrate(&frames, &config.calib_config(Some(sigma_m)))?;
    let (egt_rot_deg, egt_trans_m) = egt(&data.scene.extrinsics_gt, &result.extrinsics);
    let normals = normal_errors(&frames, &data.scene);
    Ok(SweepRow {
        sigma_cm: sigma_m * 100.0,
        egt_rot_deg,
        egt_trans_m,
        mge_m: result.mge,
        normal_err_deg: normals.iter().sum::<f64>() / normals.len().max(1) as f64,
    })
}

/// Runs [`sweep_level`] for every σ (cm); writes `sweep.csv` and `sweep.svg`.
pub fn run_sweep(config: &RunConfig, sigmas_cm: &[f64]) -> Result<Vec<SweepRow>> {
    config.validate()?;
    if let Some(s) = sigmas_cm.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(Error::Config(format!("noise level {s} cm is not a non-negative number")));
    }
    let rows = sigmas_cm
        .iter()
        .map(|s| sweep_level(config, s / 100.0))
        .collect::<Result<Vec<_>>>()?;
    create_dir(&config.output_dir)?;
    write_sweep_csv(config.output_dir.join(SWEEP_CSV), &rows)?;
    let svg_path = config.output_dir.join(SWEEP_SVG);
    std::fs::write(&svg_path, sweep_svg(&rows)).map_err(|e| Error::io(&svg_path, e))?;
    Ok(rows)
}

/// LiDAR board detection alone; writes one debug record per frame and a
/// summary under `detections/`.
pub fn run_lidar_detect(config: &RunConfig) -> Result<DetectionSummary> {
    config.validate()?;
    config.require_dataset()?;
    let data = load_dataset(&config.dataset_dir)?;
    let board = match (&config.board, &data.scene) {
        (Some(b), _) => *b,
        (None, Some(s)) => s.scene.board,
        (None, None) => {
            return Err(Error::Config(
                "board must be set in the config when the dataset has no scene.json".into(),
            ))
        }
    };
    let lidar = config.lidar_config(data.scene.as_ref().map(|s| s.noise.depth_sigma));
    let mut state = TrackingState::default();
    let out = config.output_dir.join(DETECTIONS_DIR);
    create_dir(&out)?;
    let mut summary = DetectionSummary {
        n_total: data.clouds.len(),
        ..Default::default()
    };
    for (i, cloud) in data.clouds.iter().enumerate() {
        if !config.tracking {
            state.reset();
        }
        let found = extract_lidar_features(cloud, &board, &mut state, &lidar);
        match &found {
            Ok(_) => summary.n_detect += 1,
            Err(e) => summary.failures.push((i, e.to_string())),
        }
        write_json(out.join(format!("frame_{i:04}.json")), &DetectionDump::new(i, &found))?;
    }
    write_json(out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::load_sweep_csv;

    fn config(dir: &Path) -> RunConfig {
        let mut c = RunConfig {
            dataset_dir: dir.join("data"),
            output_dir: dir.join("out"),
            rng_seed: 7,
            ..Default::default()
        };
        c.synth.frames = 8;
        c.calib.iterations = 3;
        c
    }

    #[test]
    fn synth_calibrate_evaluate_detect() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path());
        run_synth(&c).unwrap();

        let result = run_calibrate(&c).unwrap();
        assert_eq!(result.n_total, 8);
        let first = std::fs::read(c.output_dir.join(RESULT_FILE)).unwrap();
        run_calibrate(&c).unwrap();
        assert_eq!(std::fs::read(c.output_dir.join(RESULT_FILE)).unwrap(), first);
        let reloaded: ResultFile = read_json(c.output_dir.join(RESULT_FILE)).unwrap();
        assert_eq!((reloaded.best_m, reloaded.mge), (result.best_m, result.mge));
        assert!(reloaded.extrinsics.rotation.angle_to(&result.extrinsics.rotation) < 1e-12);
        let dump: FrameFeatures = read_json(c.output_dir.join(FEATURES_DIR).join("frame_0000.json")).unwrap();
        assert_eq!(dump.frame_id, 0);

        let report = run_evaluate(
            &c,
            &c.dataset_dir.join(crate::io::SCENE_FILE),
            &c.output_dir.join(RESULT_FILE),
        )
        .unwrap();
        assert!(report.egt_rot_deg.unwrap() < 0.05);
        assert!(report.egt_trans_m.is_some());

        let summary = run_lidar_detect(&c).unwrap();
        assert_eq!((summary.n_detect, summary.n_total), (8, 8));
        let d: DetectionDump = read_json(c.output_dir.join(DETECTIONS_DIR).join("frame_0003.json")).unwrap();
        assert!(d.plane.is_some() && !d.edge_points.is_empty());
    }

    #[test]
    fn sweep_noise_free_level() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path());
        let rows = run_sweep(&c, &[0.0]).unwrap();
        assert!(rows[0].egt_rot_deg <= 1e-3, "{rows:?}");
        assert_eq!(load_sweep_csv(c.output_dir.join(SWEEP_CSV)).unwrap(), rows);
        assert!(run_sweep(&c, &[-1.0]).is_err());
    }

    #[test]
    fn missing_dataset_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(run_calibrate(&config(dir.path())), Err(Error::Io { .. })));
    }
}
