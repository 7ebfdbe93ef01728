//! Rotation error of the full method against the variants without point
//! projection and without edge terms, at 4.8 cm range noise.

use lidar_camera_calib::calib::{calibrate, extract_frames};
use lidar_camera_calib::io::RunConfig;
use lidar_camera_calib::lidar::LidarConfig;
use lidar_camera_calib::metrics::egt;
use lidar_camera_calib::synth::make_reference_simulation;

fn main() {
    let sigma = 0.048;
    println!("seed   full   no projection   no edges   (EGT_R, deg)");
    for seed in 1..=3 {
        let data = make_reference_simulation(30, sigma, seed);
        let mut config = RunConfig { rng_seed: seed, ..Default::default() };
        config.calib.iterations = 10;
        let run = |lidar: LidarConfig, w_ptl: Option<f64>| {
            let (frames, _) = extract_frames(
                &data.clouds,
                &data.corners,
                &data.scene.board,
                &data.scene.camera,
                &lidar,
                config.edge_pitch,
                false,
            );
            let mut calib = config.calib_config(Some(sigma));
            calib.w_ptl = w_ptl.unwrap_or(calib.w_ptl);
            egt(&data.scene.extrinsics_gt, &calibrate(&frames, &calib).unwrap().extrinsics).0
        };
        let lidar = config.lidar_config(Some(sigma));
        let full = run(lidar.clone(), None);
        let no_pp = run(LidarConfig { project_points: false, ..lidar.clone() }, None);
        let no_ptl = run(lidar, Some(0.0));
        println!("{seed:4}  {full:.3}   {no_pp:13.3}   {no_ptl:8.3}");
    }
}
