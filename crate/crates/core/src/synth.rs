//! Analytic ray-cast scenes with known extrinsics.
//!
//! The world frame is the LiDAR frame. Board poses map board coordinates
//! (origin at the centre, z along the normal) into it, and the camera sees
//! the world through `extrinsics_gt = T^c_l`.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, CornerSet};
use crate::geom::{exp_so3, Pose, Rotation};
use crate::lidar::{BoardSpec, LidarPoint, RingCloud};

/// Depth noise levels of the standard sweep (cm).
pub const REFERENCE_NOISE_LEVELS_CM: [f64; 9] = [0.8, 1.6, 2.4, 3.2, 4.0, 4.8, 6.0, 8.0, 10.0];

/// Scan pattern of a spinning multi-beam LiDAR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LidarModel {
    pub elevations_deg: Vec<f64>,
    pub azimuth_step_deg: f64,
    pub min_range: f64,
    pub max_range: f64,
    /// Time of one revolution (s).
    pub sweep_period: f64,
}

impl LidarModel {
    /// 16 beams from −15° to +15°.
    pub fn vlp16() -> Self {
        Self {
            elevations_deg: (0..16).map(|i| -15.0 + 2.0 * i as f64).collect(),
            azimuth_step_deg: 0.1,
            min_range: 0.5,
            max_range: 30.0,
            sweep_period: 0.1,
        }
    }

    fn azimuth_count(&self) -> usize {
        (360.0 / self.azimuth_step_deg).round() as usize
    }

    fn ray(&self, ring: usize, k: usize) -> Vector3<f64> {
        let el = self.elevations_deg[ring].to_radians();
        let az = -std::f64::consts::PI + (k as f64 * self.azimuth_step_deg).to_radians();
        Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
    }
}

/// Scene geometry other than the board.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Surface {
    /// Infinite plane `n·x + d = 0`.
    Plane { normal: Vector3<f64>, offset: f64 },
    /// Rectangle centred at `pose.translation`, spanning its local x/y axes.
    Rect { pose: Pose, width: f64, height: f64 },
}

impl Surface {
    /// Range along the unit ray from the origin.
    fn intersect(&self, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Surface::Plane { normal, offset } => {
                let den = normal.dot(dir);
                (den.abs() > 1e-12).then(|| -offset / den).filter(|&t| t > 0.0)
            }
            Surface::Rect { pose, width, height } => intersect_rect(pose, *width, *height, dir),
        }
    }
}

fn intersect_rect(pose: &Pose, width: f64, height: f64, dir: &Vector3<f64>) -> Option<f64> {
    let n = pose.rotation.rotate(&Vector3::z());
    let den = n.dot(dir);
    if den.abs() < 1e-12 {
        return None;
    }
    let t = n.dot(&pose.translation) / den;
    if t <= 0.0 {
        return None;
    }
    let local = pose.inverse().transform_point(&(dir * t));
    (local.x.abs() <= 0.5 * width && local.y.abs() <= 0.5 * height).then_some(t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// LiDAR-to-camera pose `T^c_l`.
    pub extrinsics_gt: Pose,
    pub board: BoardSpec,
    /// Board-to-LiDAR pose of every frame.
    pub board_poses: Vec<Pose>,
    pub lidar: LidarModel,
    pub camera: CameraIntrinsics,
    pub clutter: Vec<Surface>,
    #[serde(default)]
    pub pixel_noise_sigma: f64,
    pub rng_seed: u64,
}

impl SceneConfig {
    /// Board-to-camera pose of frame `i`.
    pub fn board_in_camera(&self, i: usize) -> Pose {
        self.extrinsics_gt.compose(&self.board_poses[i])
    }

    /// Ground-truth board plane of frame `i` in the LiDAR frame, oriented
    /// so that `d > 0`.
    pub fn lidar_plane(&self, i: usize) -> (Vector3<f64>, f64) {
        let p = &self.board_poses[i];
        let n = p.rotation.rotate(&Vector3::z());
        let d = -n.dot(&p.translation);
        if d < 0.0 {
            (-n, -d)
        } else {
            (n, d)
        }
    }
}

/// Boundary noise relative to depth noise in [`NoiseConfig::with_sigma`].
pub const BOUNDARY_NOISE_RATIO: f64 = 1.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Range noise on every point (m).
    pub depth_sigma: f64,
    /// Extra range noise near the board boundary (m).
    pub boundary_sigma: f64,
    /// Width of the boundary band, measured in the board plane (m).
    pub boundary_band: f64,
}

impl NoiseConfig {
    /// Depth noise `sigma` with boundary noise `BOUNDARY_NOISE_RATIO * sigma`
    /// over a band of 1.5 azimuth spacings at 3 m.
    pub fn with_sigma(sigma: f64, lidar: &LidarModel) -> Self {
        Self {
            depth_sigma: sigma,
            boundary_sigma: BOUNDARY_NOISE_RATIO * sigma,
            boundary_band: 1.5 * 3.0 * lidar.azimuth_step_deg.to_radians(),
        }
    }
}

fn frame_seed(base: u64, frame: usize, stream: u64) -> u64 {
    base.wrapping_add((frame as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93)
}

/// Ray-casts frame `board_index`. The nearest surface hit within range
/// wins; rays hitting nothing are omitted.
pub fn render_lidar_frame(scene: &SceneConfig, board_index: usize) -> RingCloud {
    let board = scene.board_poses.get(board_index);
    let lidar = &scene.lidar;
    let n_az = lidar.azimuth_count();
    let mut points = Vec::new();
    for ring in 0..lidar.elevations_deg.len() {
        for k in 0..n_az {
            let dir = lidar.ray(ring, k);
            let mut best = board.and_then(|b| intersect_rect(b, scene.board.width, scene.board.height, &dir));
            for s in &scene.clutter {
                if let Some(t) = s.intersect(&dir) {
                    if best.is_none_or(|b| t < b) {
                        best = Some(t);
                    }
                }
            }
            if let Some(t) = best.filter(|&t| t >= lidar.min_range && t <= lidar.max_range) {
                points.push(LidarPoint {
                    xyz: dir * t,
                    ring: Some(ring as u16),
                    timestamp: Some(lidar.sweep_period * k as f64 / n_az as f64),
                });
            }
        }
    }
    RingCloud {
        points,
        ring_count: lidar.elevations_deg.len(),
    }
}

fn perturb_range(p: &mut LidarPoint, dr: f64) {
    let r = p.xyz.norm();
    if r > 0.0 {
        p.xyz *= (r + dr) / r;
    }
}

/// Moves every point along its ray by `N(0, sigma²)`.
pub fn apply_depth_noise(cloud: &RingCloud, sigma: f64, seed: u64) -> RingCloud {
    let mut out = cloud.clone();
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Normal::new(0.0, sigma).expect("finite sigma");
        for p in out.points.iter_mut() {
            perturb_range(p, g.sample(&mut rng));
        }
    }
    out
}

/// Adds `N(0, sigma_b²)` range noise to board points whose in-plane
/// distance to the board boundary is below `band`. Board membership is
/// judged on the input geometry, so apply this before depth noise.
pub fn apply_boundary_noise(cloud: &RingCloud, board_pose: &Pose, spec: &BoardSpec, band: f64, sigma_b: f64, seed: u64) -> RingCloud {
    let mut out = cloud.clone();
    if band <= 0.0 || sigma_b <= 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Normal::new(0.0, sigma_b).expect("finite sigma");
    let to_board = board_pose.inverse();
    for p in out.points.iter_mut() {
        let l = to_board.transform_point(&p.xyz);
        let (dx, dy) = (0.5 * spec.width - l.x.abs(), 0.5 * spec.height - l.y.abs());
        if l.z.abs() <= 1e-9 && dx >= -1e-9 && dy >= -1e-9 && dx.min(dy) < band {
            perturb_range(p, g.sample(&mut rng));
        }
    }
    out
}

/// Projects the inner corners of frame `board_index`. Any corner behind
/// the camera or outside the image marks the set undetected.
pub fn render_camera_frame(scene: &SceneConfig, board_index: usize) -> CornerSet {
    let pose = scene.board_in_camera(board_index);
    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(scene.rng_seed, board_index, 3));
    let noise = (scene.pixel_noise_sigma > 0.0).then(|| Normal::new(0.0, scene.pixel_noise_sigma).expect("finite sigma"));
    let mut corners = Vec::new();
    for c in scene.board.inner_corners() {
        let Some(mut uv) = scene.camera.project(&pose.transform_point(&c)) else {
            return CornerSet::missing(board_index);
        };
        if let Some(g) = &noise {
            uv += Vector2::new(g.sample(&mut rng), g.sample(&mut rng));
        }
        if !scene.camera.in_image(&uv) {
            return CornerSet::missing(board_index);
        }
        corners.push(uv);
    }
    CornerSet {
        frame_id: board_index,
        corners,
        detected: true,
    }
}

/// Rendered frames plus everything needed to regenerate or score them.
#[derive(Clone, Debug, PartialEq)]
pub struct SimDataset {
    pub scene: SceneConfig,
    pub noise: NoiseConfig,
    pub clouds: Vec<RingCloud>,
    pub corners: Vec<CornerSet>,
}

/// Renders every frame of `scene` with `noise`.
pub fn render_dataset(scene: SceneConfig, noise: NoiseConfig) -> SimDataset {
    let clouds: Vec<RingCloud> = (0..scene.board_poses.len())
        .into_par_iter()
        .map(|i| {
            let clean = render_lidar_frame(&scene, i);
            let b = apply_boundary_noise(
                &clean,
                &scene.board_poses[i],
                &scene.board,
                noise.boundary_band,
                noise.boundary_sigma,
                frame_seed(scene.rng_seed, i, 1),
            );
            apply_depth_noise(&b, noise.depth_sigma, frame_seed(scene.rng_seed, i, 2))
        })
        .collect();
    let corners = (0..scene.board_poses.len()).map(|i| render_camera_frame(&scene, i)).collect();
    SimDataset {
        scene,
        noise,
        clouds,
        corners,
    }
}

/// Reference extrinsics: roll −70°, pitch −70°, yaw 150°, translation
/// (0.4185, −0.3050, −0.1476) m.
pub fn reference_extrinsics() -> Pose {
    Pose::new(
        Rotation::from_euler_zyx((-70f64).to_radians(), (-70f64).to_radians(), 150f64.to_radians()),
        Vector3::new(0.4185, -0.3050, -0.1476),
    )
}

pub fn default_board() -> BoardSpec {
    BoardSpec {
        width: 0.8,
        height: 0.6,
        inner_rows: 5,
        inner_cols: 7,
        square_size: 0.1,
    }
}

pub fn default_camera() -> CameraIntrinsics {
    CameraIntrinsics::pinhole(600.0, 600.0, 640.0, 360.0, 1280, 720)
}

/// Ground 1.2 m below the LiDAR and a wall 6 m ahead of the camera.
pub fn default_clutter(extrinsics: &Pose) -> Vec<Surface> {
    let view = extrinsics.rotation.transpose().rotate(&Vector3::z());
    let ahead = Vector3::new(view.x, view.y, 0.0).normalize();
    let wall_rot = Rotation::from_matrix(&nalgebra::Matrix3::from_columns(&[
        Vector3::z().cross(&ahead),
        Vector3::z(),
        ahead,
    ]));
    vec![
        Surface::Plane {
            normal: Vector3::z(),
            offset: 1.2,
        },
        Surface::Rect {
            pose: Pose::new(wall_rot, ahead * 6.0 + Vector3::new(0.0, 0.0, 0.6)),
            width: 12.0,
            height: 3.6,
        },
    ]
}

fn elevation_band(lidar: &LidarModel) -> (f64, f64) {
    let lo = lidar.elevations_deg.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = lidar.elevations_deg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo.to_radians(), hi.to_radians())
}

/// Counts board hits per ring, ignoring occlusion.
fn board_rings_hit(scene: &SceneConfig, pose: &Pose) -> Vec<usize> {
    let lidar = &scene.lidar;
    let n_az = lidar.azimuth_count();
    (0..lidar.elevations_deg.len())
        .map(|ring| {
            (0..n_az)
                .filter(|&k| intersect_rect(pose, scene.board.width, scene.board.height, &lidar.ray(ring, k)).is_some())
                .count()
        })
        .collect()
}

/// Draws a board pose in front of the camera: 1.5–4 m away, tilted up to
/// 45° from the line of sight and spun in-plane up to 30°. Every corner
/// stays 20 px inside the image, the whole board inside the beam fan, at
/// least four rings cross it and no part sits below the ground or beyond
/// the wall.
pub fn sample_board_pose(scene: &SceneConfig, rng: &mut impl Rng) -> Pose {
    let cam_to_lidar = scene.extrinsics_gt.inverse();
    let margin = 20.0;
    loop {
        let range = rng.random_range(1.5..4.0);
        let dir = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.3..0.3), 1.0).normalize();
        let tilt_axis_angle = rng.random_range(0.0..std::f64::consts::TAU);
        let tilt = rng.random_range(0.0..45f64).to_radians();
        let spin = rng.random_range(-30f64..30.0).to_radians();
        // Face the camera along the line of sight, then tilt and spin.
        let face = nalgebra::Rotation3::rotation_between(&Vector3::z(), &dir)
            .map_or(Rotation::identity(), |r| Rotation::from_matrix_unchecked(r.into_inner()));
        let rot = face
            * exp_so3(&(Vector3::new(tilt_axis_angle.cos(), tilt_axis_angle.sin(), 0.0) * tilt))
            * exp_so3(&(Vector3::z() * spin));
        let in_camera = Pose::new(rot, dir * range);
        let inside = scene.board.outline().iter().chain(scene.board.inner_corners().iter()).all(|c| {
            scene.camera.project(&in_camera.transform_point(c)).is_some_and(|uv| {
                uv.x >= margin && uv.y >= margin && uv.x <= scene.camera.width as f64 - margin && uv.y <= scene.camera.height as f64 - margin
            })
        });
        if !inside {
            continue;
        }
        let pose = cam_to_lidar.compose(&in_camera);
        let outline: Vec<Vector3<f64>> = scene.board.outline().iter().map(|c| pose.transform_point(c)).collect();
        let (lo, hi) = elevation_band(&scene.lidar);
        let in_band = outline.iter().all(|p| {
            let el = p.z.atan2(p.xy().norm());
            el >= lo && el <= hi
        });
        if !in_band || outline.iter().any(|p| p.z < -1.1 || p.norm() > 5.0) {
            continue;
        }
        if board_rings_hit(scene, &pose).iter().filter(|&&c| c >= 10).count() >= 4 {
            return pose;
        }
    }
}

/// The standard simulation: reference extrinsics, a 0.8 m × 0.6 m board,
/// ground and wall clutter, and `dataset_size` random board poses. A zero
/// `noise_sigma` gives noise-free data.
pub fn make_reference_simulation(dataset_size: usize, noise_sigma: f64, seed: u64) -> SimDataset {
    let extrinsics = reference_extrinsics();
    let mut scene = SceneConfig {
        extrinsics_gt: extrinsics,
        board: default_board(),
        board_poses: Vec::new(),
        lidar: LidarModel::vlp16(),
        camera: default_camera(),
        clutter: default_clutter(&extrinsics),
        pixel_noise_sigma: 0.0,
        rng_seed: seed,
    };
    // Poses depend only on the seed so every noise level shares them.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    scene.board_poses = (0..dataset_size).map(|_| sample_board_pose(&scene, &mut rng)).collect();
    let noise = NoiseConfig::with_sigma(noise_sigma, &scene.lidar);
    render_dataset(scene, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn empty_scene() -> SceneConfig {
        SceneConfig {
            extrinsics_gt: Pose::identity(),
            board: default_board(),
            board_poses: vec![],
            lidar: LidarModel::vlp16(),
            camera: default_camera(),
            clutter: vec![],
            pixel_noise_sigma: 0.0,
            rng_seed: 0,
        }
    }

    #[test]
    fn ground_plane_ranges() {
        let mut scene = empty_scene();
        scene.clutter.push(Surface::Plane {
            normal: Vector3::z(),
            offset: 1.0,
        });
        scene.lidar.azimuth_step_deg = 1.0;
        scene.lidar.max_range = 1000.0;
        let cloud = render_lidar_frame(&scene, 0);
        assert!(cloud.points.iter().all(|p| p.ring.unwrap() < 8));
        for p in cloud.points.iter().filter(|p| p.ring == Some(0)) {
            assert_relative_eq!(p.xyz.norm(), 1.0 / 15f64.to_radians().sin(), epsilon = 1e-9);
        }
    }

    #[test]
    fn board_hit_count_matches_enumeration() {
        let mut scene = empty_scene();
        scene.board = BoardSpec {
            width: 1.0,
            height: 1.0,
            ..default_board()
        };
        // Facing the sensor along +x, 3 m away.
        let facing = Rotation::from_matrix(&nalgebra::Matrix3::from_columns(&[Vector3::y(), Vector3::z(), Vector3::x()]));
        scene.board_poses.push(Pose::new(facing, Vector3::new(3.0, 0.0, 0.0)));
        let cloud = render_lidar_frame(&scene, 0);
        let lidar = &scene.lidar;
        let mut expected = 0;
        for ring in 0..16 {
            for k in 0..lidar.azimuth_count() {
                let d = lidar.ray(ring, k);
                if d.x > 0.0 {
                    let p = d * (3.0 / d.x);
                    if p.y.abs() <= 0.5 && p.z.abs() <= 0.5 {
                        expected += 1;
                    }
                }
            }
        }
        assert!(expected > 0);
        assert_eq!(cloud.len(), expected);
        assert!(cloud.points.iter().all(|p| (p.xyz.x - 3.0).abs() <= 1e-12));
    }

    #[test]
    fn wall_occludes_board() {
        let mut scene = empty_scene();
        let facing = Rotation::from_matrix(&nalgebra::Matrix3::from_columns(&[Vector3::y(), Vector3::z(), Vector3::x()]));
        scene.board_poses.push(Pose::new(facing, Vector3::new(4.0, 0.0, 0.0)));
        scene.clutter.push(Surface::Rect {
            pose: Pose::new(facing, Vector3::new(2.0, 0.0, 0.0)),
            width: 4.0,
            height: 4.0,
        });
        let cloud = render_lidar_frame(&scene, 0);
        assert!(!cloud.is_empty());
        assert!(cloud.points.iter().all(|p| (p.xyz.x - 2.0).abs() <= 1e-9));
    }

    fn wall_cloud(n: usize) -> RingCloud {
        RingCloud {
            points: (0..n)
                .map(|i| LidarPoint::new(Vector3::new(5.0, -2.0 + 4.0 * i as f64 / n as f64, 0.3), Some(0)))
                .collect(),
            ring_count: 1,
        }
    }

    #[test]
    fn depth_noise_statistics() {
        let cloud = wall_cloud(10);
        assert_eq!(apply_depth_noise(&cloud, 0.0, 1), cloud);
        let cloud = wall_cloud(100_000);
        let noisy = apply_depth_noise(&cloud, 0.1, 2);
        let dr: Vec<f64> = cloud.points.iter().zip(&noisy.points).map(|(a, b)| b.xyz.norm() - a.xyz.norm()).collect();
        let mean = dr.iter().sum::<f64>() / dr.len() as f64;
        let std = (dr.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / dr.len() as f64).sqrt();
        assert!((std - 0.1).abs() <= 0.002, "std {std}");
        // Displacement stays on the ray.
        for (a, b) in cloud.points.iter().zip(&noisy.points).take(100) {
            assert!(a.xyz.normalize().cross(&b.xyz.normalize()).norm() <= 1e-12);
        }
    }

    #[test]
    fn boundary_noise_band() {
        let spec = default_board();
        let facing = Rotation::from_matrix(&nalgebra::Matrix3::from_columns(&[Vector3::y(), Vector3::z(), Vector3::x()]));
        let board = Pose::new(facing, Vector3::new(3.0, 0.0, 0.0));
        let near = LidarPoint::new(Vector3::new(3.0, 0.395, 0.0), Some(0));
        let far = LidarPoint::new(Vector3::new(3.0, 0.0, 0.05), Some(0));
        let cloud = RingCloud {
            points: vec![near, far],
            ring_count: 1,
        };
        assert_eq!(apply_boundary_noise(&cloud, &board, &spec, 0.0, 0.05, 1), cloud);
        let out = apply_boundary_noise(&cloud, &board, &spec, 0.02, 0.05, 1);
        assert_ne!(out.points[0], near);
        assert_eq!(out.points[1], far);

        let many = RingCloud {
            points: vec![near; 50_000],
            ring_count: 1,
        };
        let b = apply_boundary_noise(&many, &board, &spec, 0.02, 0.03, 4);
        let noisy = apply_depth_noise(&b, 0.04, 5);
        let r0 = near.xyz.norm();
        let var = noisy.points.iter().map(|p| (p.xyz.norm() - r0).powi(2)).sum::<f64>() / 50_000.0;
        assert!((var / (0.03f64.powi(2) + 0.04f64.powi(2)) - 1.0).abs() <= 0.03, "var {var}");
    }

    #[test]
    fn centred_board_projects_to_principal_point() {
        let mut scene = empty_scene();
        scene.board_poses.push(Pose::new(Rotation::identity(), Vector3::new(0.0, 0.0, 2.0)));
        let c = render_camera_frame(&scene, 0);
        assert!(c.detected);
        // 7 × 5 grid: the middle corner is index 2 * 7 + 3.
        assert!((c.corners[17] - Vector2::new(640.0, 360.0)).norm() <= 1e-9);

        scene.board_poses[0] = Pose::new(Rotation::identity(), Vector3::new(0.0, 0.0, -2.0));
        assert!(!render_camera_frame(&scene, 0).detected);
    }

    #[test]
    fn reference_simulation_properties() {
        let ds = make_reference_simulation(4, 0.0, 11);
        let gt = reference_extrinsics();
        let q = gt.rotation.to_quaternion_wxyz();
        let back = Rotation::from_quaternion_wxyz(q);
        assert!(back.angle_to(&Rotation::from_euler_zyx(
            (-70f64).to_radians(),
            (-70f64).to_radians(),
            150f64.to_radians()
        )) <= 1e-12);
        assert_eq!(gt.translation, Vector3::new(0.4185, -0.3050, -0.1476));
        assert_eq!(ds.clouds.len(), 4);
        for (i, cloud) in ds.clouds.iter().enumerate() {
            assert!(ds.corners[i].detected);
            let to_board = ds.scene.board_poses[i].inverse();
            let on_board = cloud
                .points
                .iter()
                .map(|p| to_board.transform_point(&p.xyz))
                .filter(|l| l.x.abs() <= 0.4 + 1e-9 && l.y.abs() <= 0.3 + 1e-9 && l.z.abs() <= 1e-6)
                .count();
            assert!(on_board >= 40, "frame {i}: {on_board}");
            let (n, d) = ds.scene.lidar_plane(i);
            for p in cloud.points.iter().filter(|p| (n.dot(&p.xyz) + d).abs() <= 1e-6) {
                assert!((n.dot(&p.xyz) + d).abs() <= 1e-12);
            }
        }
        assert_eq!(make_reference_simulation(4, 0.0, 11), ds);
    }
}
