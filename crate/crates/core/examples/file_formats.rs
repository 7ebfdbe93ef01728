//! Dataset files: clouds, corners, events, scene and run config.

use lidar_camera_calib::camera::Event;
use lidar_camera_calib::io::{
    cloud_path, corners_path, load_cloud, load_corners, load_dataset, load_events, write_dataset, write_events,
    RunConfig,
};
use lidar_camera_calib::synth::make_reference_simulation;
use nalgebra::Vector2;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_reference_simulation(3, 0.01, 2);
    write_dataset(dir.path(), &data).unwrap();

    let cloud = load_cloud(cloud_path(dir.path(), 0)).unwrap();
    println!("cloud: {} points, identical after reload: {}", cloud.len(), cloud == data.clouds[0]);
    let corners = load_corners(corners_path(dir.path(), 0)).unwrap();
    println!("corners: {} points in frame {}", corners.corners.len(), corners.frame_id);
    let head: String = std::fs::read_to_string(cloud_path(dir.path(), 0)).unwrap().lines().take(3).collect::<Vec<_>>().join("\n");
    println!("{head}");

    let reloaded = load_dataset(dir.path()).unwrap();
    println!("dataset: {} frames, scene present: {}", reloaded.clouds.len(), reloaded.scene.is_some());

    let events = vec![
        Event { u: Vector2::new(10.5, 20.0), t: 0.001, polarity: 1 },
        Event { u: Vector2::new(11.0, 20.0), t: 0.002, polarity: -1 },
    ];
    let path = dir.path().join("events.csv");
    write_events(&path, &events).unwrap();
    println!("events round trip: {}", load_events(&path).unwrap() == events);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "x,y,z,ring,t\n1,2,NaN,0,0\n").unwrap();
    println!("malformed cloud: {}", load_cloud(&bad).unwrap_err());

    let config: RunConfig = serde_json::from_str(r#"{"dataset_dir": "data", "rng_seed": 7, "calib": {"iterations": 20}}"#).unwrap();
    config.validate().unwrap();
    println!("{}", serde_json::to_string_pretty(&config).unwrap());
}
