//! Board pose, normal covariance and outline samples from detected
//! corners, plus event chunking around frame times.

use lidar_camera_calib::camera::{
    accumulate_event_image, chunk_events, extract_camera_features, Event, DEFAULT_CHUNK_DURATION, DEFAULT_EDGE_PITCH,
};
use lidar_camera_calib::synth::{make_reference_simulation, render_camera_frame};
use nalgebra::Vector2;

fn main() {
    let mut data = make_reference_simulation(2, 0.0, 5);
    data.scene.pixel_noise_sigma = 0.3;
    let corners = render_camera_frame(&data.scene, 0);
    println!("{} corners detected", corners.corners.len());

    let f = extract_camera_features(&corners, &data.scene.board, &data.scene.camera, DEFAULT_EDGE_PITCH).unwrap();
    let truth = data.scene.board_in_camera(0);
    println!(
        "board pose error {:.3} deg / {:.2} mm",
        f.board_pose.rotation.angle_to(&truth.rotation).to_degrees(),
        1e3 * (f.board_pose.translation - truth.translation).norm()
    );
    println!("normal {:.4?}, offset {:.4} m", f.normal.as_slice(), f.offset);
    println!("predicted normal std {:.3} deg", f.normal_covariance.trace().sqrt().to_degrees());
    println!("{} outline samples every {} mm", f.edge_points.len(), 1e3 * DEFAULT_EDGE_PITCH);

    // A synthetic event stream at 1 kHz sweeping across the image.
    let stream: Vec<Event> = (0..1000)
        .map(|i| Event {
            u: Vector2::new(i as f64 * 1.2 % 1280.0, 360.0),
            t: i as f64 * 1e-3,
            polarity: if i % 3 == 0 { -1 } else { 1 },
        })
        .collect();
    for chunk in chunk_events(&stream, &[0.1, 0.5, 0.9], DEFAULT_CHUNK_DURATION) {
        let image = accumulate_event_image(&chunk.events, &data.scene.camera);
        println!(
            "chunk at {:.1} s: {} events, net polarity {}",
            chunk.anchor,
            chunk.events.len(),
            image.counts.iter().sum::<i32>()
        );
    }
}
