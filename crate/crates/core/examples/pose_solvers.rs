//! The global pose solvers on small synthetic problems, checked against
//! the brute-force oracle.

use lidar_camera_calib::metrics::egt;
use lidar_camera_calib::qpep::{
    brute_force_pose_oracle, ptpl_objective_gradient, solve_pnp, solve_point_registration_3d3d, solve_ptpl,
    solve_wahba, PnpCorrespondence, PtplConstraint, TranslationSearch,
};
use lidar_camera_calib::{Pose, Rotation};
use nalgebra::{Matrix3, Vector2, Vector3};

fn main() {
    let gt = Pose::new(
        Rotation::from_euler_zyx(0.4, -0.7, 2.1),
        Vector3::new(0.3, -0.2, 0.5),
    );

    // Three walls seen from the source frame.
    let walls = [(Vector3::x(), 2.0), (Vector3::y(), 3.0), (Vector3::new(0.0, 0.6, 0.8), 1.5)];
    let inv = gt.inverse();
    let mut planes = Vec::new();
    for (n, d) in walls {
        let u = n.cross(&Vector3::new(0.3, 0.1, 0.9)).normalize();
        let v = n.cross(&u);
        for i in 0..20 {
            let q = n * d + u * (0.1 * i as f64 - 1.0) + v * (0.37 * i as f64 % 1.3 - 0.6);
            planes.push(PtplConstraint::new(n, n * d, inv.transform_point(&q)));
        }
    }
    let sol = solve_ptpl(&planes).unwrap();
    let (r, t) = egt(&gt, &sol.pose);
    println!("point-to-plane: EGT {r:.2e} deg / {t:.2e} m, objective {:.2e}", sol.objective_value);

    let profile = |rot: &Rotation| {
        let (mut a, mut b) = (Matrix3::zeros(), Vector3::zeros());
        for c in &planes {
            let nn = c.normal * c.normal.transpose();
            a += nn;
            b += nn * (c.anchor - rot.rotate(&c.point));
        }
        a.try_inverse().unwrap() * b
    };
    let oracle = brute_force_pose_oracle(
        &|p: &Pose| ptpl_objective_gradient(&planes, p).0,
        10.0,
        TranslationSearch::Profiled(&profile),
    );
    println!("oracle objective {:.2e} (solver {:.2e})", oracle.objective_value, sol.objective_value);

    // A 4 x 3 grid seen by a unit-focal camera.
    let corrs: Vec<PnpCorrespondence> = (0..12)
        .map(|i| {
            let obj = Vector3::new(0.1 * (i % 4) as f64, 0.1 * (i / 4) as f64, 0.0);
            let c = gt.compose(&Pose::new(Rotation::identity(), Vector3::new(0.0, 0.0, 2.0))).transform_point(&obj);
            let x = Vector2::new(c.x / c.z, c.y / c.z);
            PnpCorrespondence::from_normalized(obj, x, x)
        })
        .collect();
    let pnp = solve_pnp(&corrs).unwrap();
    println!("PnP: board {:.3} m in front of the camera", pnp.pose.translation.norm());

    let pairs: Vec<_> = [Vector3::x(), Vector3::y(), Vector3::z()]
        .iter()
        .map(|v| (*v, gt.rotation.rotate(v), 1.0))
        .collect();
    println!("Wahba: {:.2e} rad", solve_wahba(&pairs).unwrap().angle_to(&gt.rotation));

    let pts: Vec<_> = [Vector3::zeros(), Vector3::x(), Vector3::y(), Vector3::new(0.2, 0.3, 1.0)]
        .iter()
        .map(|p| (*p, gt.transform_point(p)))
        .collect();
    let (r, t) = egt(&gt, &solve_point_registration_3d3d(&pts).unwrap());
    println!("3D-3D registration: EGT {r:.2e} deg / {t:.2e} m");
}
