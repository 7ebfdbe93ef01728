//! Rotations and poses: exp/log, right perturbation, quaternions, JSON.

use lidar_camera_calib::geom::{exp_so3, log_so3};
use lidar_camera_calib::synth::reference_extrinsics;
use lidar_camera_calib::{Pose, Rotation};
use nalgebra::Vector3;

fn main() {
    let phi = Vector3::new(0.3, -0.2, 0.9);
    let r = exp_so3(&phi);
    println!("exp/log round trip error: {:.2e}", (log_so3(&r) - phi).norm());

    let dphi = Vector3::new(1e-3, 0.0, 0.0);
    let perturbed = r.perturb_right(&dphi);
    println!("right perturbation moves the rotation by {:.4} mrad", 1e3 * r.angle_to(&perturbed));

    let q = r.to_quaternion_wxyz();
    println!("quaternion (w, x, y, z): {q:.6?}");
    println!("quaternion round trip: {:.2e} rad", Rotation::from_quaternion_wxyz(q).angle_to(&r));

    let extr = reference_extrinsics();
    let p = Vector3::new(2.0, 0.5, -0.3);
    let back = extr.inverse().transform_point(&extr.transform_point(&p));
    println!("T^-1 T p - p: {:.2e}", (back - p).norm());
    println!("T compose T^-1 is identity: {}", extr.compose(&extr.inverse()).rotation.angle() < 1e-12);

    let json = serde_json::to_string(&extr).unwrap();
    println!("pose JSON: {json}");
    let parsed: Pose = serde_json::from_str(&json).unwrap();
    println!("JSON round trip: {:.2e} rad", parsed.rotation.angle_to(&extr.rotation));
}
