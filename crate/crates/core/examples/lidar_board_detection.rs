//! Finds the board in one cluttered synthetic scan, stage by stage.

use lidar_camera_calib::lidar::{
    cluster_dbscan, extract_lidar_features, filter_segments, segment_ring, split_rings, LidarConfig, TrackingState,
};
use lidar_camera_calib::metrics::normal_angle_error;
use lidar_camera_calib::synth::make_reference_simulation;

fn main() {
    let sigma = 0.02;
    let data = make_reference_simulation(3, sigma, 11);
    let cloud = &data.clouds[0];
    let config = LidarConfig::adapted_to_range_noise(sigma);
    println!("{} points on {} rings", cloud.len(), cloud.ring_count);

    let rings = split_rings(cloud).unwrap();
    let segments: Vec<_> = rings.iter().flat_map(|r| segment_ring(cloud, r, config.gap_threshold)).collect();
    let n_segments = segments.len();
    let kept = filter_segments(segments, config.linearity_min, config.max_segment_length, config.range_noise_sigma);
    println!("{n_segments} ring segments, {} short and straight", kept.len());

    let points: Vec<_> = kept.iter().flat_map(|s| s.indices.iter().map(|&i| cloud.points[i].xyz)).collect();
    let clusters = cluster_dbscan(&points, config.dbscan_eps, config.dbscan_min_pts, config.min_cluster_size);
    println!("{} clusters after DBSCAN", clusters.len());

    let mut state = TrackingState::default();
    for (i, cloud) in data.clouds.iter().enumerate() {
        let f = extract_lidar_features(cloud, &data.scene.board, &mut state, &config).unwrap();
        println!(
            "frame {i}: {} planar + {} edge points, normal error {:.3} deg, template fit {:.4} m",
            f.planar_points.len(),
            f.edge_points.len(),
            normal_angle_error(&f.plane.normal, &data.scene.lidar_plane(i).0),
            f.registration_error
        );
    }
}
