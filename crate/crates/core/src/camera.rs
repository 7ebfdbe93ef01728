//! Camera-side board features: pose from inner corners, the board plane,
//! densely sampled outline points and the normal's uncertainty. Also holds
//! the event-stream chunker used to time-align reconstructed frames with
//! LiDAR sweeps.

use nalgebra::{DMatrix, Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{skew, Pose, Rotation};
use crate::lidar::BoardSpec;
use crate::qpep::{solve_pnp, PnpCorrespondence};

/// Pinhole camera with radial-tangential distortion `(k1, k2, p1, p2, k3)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub distortion: [f64; 5],
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            distortion: [0.0; 5],
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cy >= 0.0
            && self.cx <= self.width as f64
            && self.cy <= self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid intrinsics {self:?}")))
        }
    }

    pub fn has_distortion(&self) -> bool {
        self.distortion.iter().any(|&k| k != 0.0)
    }

    pub fn in_image(&self, uv: &Vector2<f64>) -> bool {
        uv.x >= 0.0 && uv.y >= 0.0 && uv.x < self.width as f64 && uv.y < self.height as f64
    }

    /// Applies the distortion model on the normalized plane.
    pub fn distort_normalized(&self, x: &Vector2<f64>) -> Vector2<f64> {
        let [k1, k2, p1, p2, k3] = self.distortion;
        let r2 = x.norm_squared();
        let radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
        Vector2::new(
            x.x * radial + 2.0 * p1 * x.x * x.y + p2 * (r2 + 2.0 * x.x * x.x),
            x.y * radial + p1 * (r2 + 2.0 * x.y * x.y) + 2.0 * p2 * x.x * x.y,
        )
    }

    fn distort_jacobian(&self, x: &Vector2<f64>) -> Matrix2<f64> {
        let [k1, k2, p1, p2, k3] = self.distortion;
        let r2 = x.norm_squared();
        let radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
        let dradial = k1 + r2 * (2.0 * k2 + 3.0 * k3 * r2);
        let (u, v) = (x.x, x.y);
        Matrix2::new(
            radial + 2.0 * u * u * dradial + 2.0 * p1 * v + 6.0 * p2 * u,
            2.0 * u * v * dradial + 2.0 * p1 * u + 2.0 * p2 * v,
            2.0 * u * v * dradial + 2.0 * p1 * u + 2.0 * p2 * v,
            radial + 2.0 * v * v * dradial + 6.0 * p1 * v + 2.0 * p2 * u,
        )
    }

    /// Inverts [`Self::distort_normalized`] with at most 20 Newton steps.
    pub fn undistort_normalized(&self, xd: &Vector2<f64>) -> Result<Vector2<f64>> {
        let mut x = *xd;
        for _ in 0..20 {
            let r = self.distort_normalized(&x) - xd;
            if r.norm() <= 1e-10 {
                return Ok(x);
            }
            let Some(jinv) = self.distort_jacobian(&x).try_inverse() else {
                break;
            };
            x -= jinv * r;
            if !x.iter().all(|c| c.is_finite()) {
                break;
            }
        }
        if (self.distort_normalized(&x) - xd).norm() <= 1e-10 {
            Ok(x)
        } else {
            Err(Error::NonConvergence(format!(
                "undistortion of normalized point ({:.4}, {:.4})",
                xd.x, xd.y
            )))
        }
    }

    pub fn pixel_to_normalized(&self, uv: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((uv.x - self.cx) / self.fx, (uv.y - self.cy) / self.fy)
    }

    pub fn normalized_to_pixel(&self, x: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * x.x + self.cx, self.fy * x.y + self.cy)
    }

    /// Projects a camera-frame point, with distortion. `None` behind the
    /// camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p.z <= 0.0 {
            return None;
        }
        let x = Vector2::new(p.x / p.z, p.y / p.z);
        Some(self.normalized_to_pixel(&self.distort_normalized(&x)))
    }
}

/// Detected inner corners of one image, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CornerSet {
    pub frame_id: usize,
    pub corners: Vec<Vector2<f64>>,
    pub detected: bool,
}

impl CornerSet {
    pub fn missing(frame_id: usize) -> Self {
        Self {
            frame_id,
            corners: Vec::new(),
            detected: false,
        }
    }
}

/// Board features in the camera frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraBoardFeatures {
    /// Board-to-camera pose `T^c_b`.
    pub board_pose: Pose,
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub normal_covariance: Matrix3<f64>,
    pub edge_points: Vec<Vector3<f64>>,
    pub edge_tangents: Vec<Vector3<f64>>,
    /// Outer board corners in the camera frame, in outline order.
    pub outline: [Vector3<f64>; 4],
}

impl CameraBoardFeatures {
    /// `n·x + d`.
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) + self.offset
    }

    /// Distance from `p` to the nearest side of the board outline.
    pub fn outline_distance(&self, p: &Vector3<f64>) -> f64 {
        (0..4)
            .map(|i| segment_distance(p, &self.outline[i], &self.outline[(i + 1) % 4]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Distance from `p` to segment `[a, b]`.
pub fn segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let s = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + s * ab)).norm()
}

/// Removes lens distortion; output pixels follow the undistorted pinhole
/// model of the same intrinsics.
pub fn undistort_corners(corners: &CornerSet, intr: &CameraIntrinsics) -> Result<CornerSet> {
    if !corners.detected {
        return Err(Error::DegenerateInput(format!("frame {} has no detected corners", corners.frame_id)));
    }
    let out = corners
        .corners
        .iter()
        .enumerate()
        .map(|(i, uv)| {
            intr.undistort_normalized(&intr.pixel_to_normalized(uv))
                .map(|x| intr.normalized_to_pixel(&x))
                .map_err(|e| match e {
                    Error::NonConvergence(m) => Error::NonConvergence(format!("corner {i}: {m}")),
                    e => e,
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CornerSet {
        frame_id: corners.frame_id,
        corners: out,
        detected: true,
    })
}

/// Board pose `T^c_b` and its rotation covariance from undistorted corners.
pub fn estimate_board_pose(corners: &CornerSet, spec: &BoardSpec, intr: &CameraIntrinsics) -> Result<(Pose, Matrix3<f64>)> {
    let object = spec.inner_corners();
    if !corners.detected || corners.corners.len() != object.len() {
        return Err(Error::DegenerateInput(format!(
            "frame {}: expected {} corners, got {}",
            corners.frame_id,
            object.len(),
            corners.corners.len()
        )));
    }
    let corrs: Vec<PnpCorrespondence> = object
        .iter()
        .zip(&corners.corners)
        .map(|(o, uv)| PnpCorrespondence::from_normalized(*o, *uv, intr.pixel_to_normalized(uv)))
        .collect();
    let sol = solve_pnp(&corrs)?;
    Ok((sol.pose, sol.rotation_covariance))
}

/// Samples the board outline at `pitch` and maps it into the camera frame.
/// Every sample carries the unit direction of its side.
pub fn generate_edge_points(board_pose: &Pose, spec: &BoardSpec, pitch: f64) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let corners = spec.outline();
    let mut points = Vec::new();
    let mut tangents = Vec::new();
    for i in 0..4 {
        let a = corners[i];
        let b = corners[(i + 1) % 4];
        let side = b - a;
        let n = (side.norm() / pitch).round().max(1.0) as usize;
        let tangent = board_pose.rotation.rotate(&side.normalize());
        for k in 0..n {
            let p = a + side * (k as f64 / n as f64);
            points.push(board_pose.transform_point(&p));
            tangents.push(tangent);
        }
    }
    (points, tangents)
}

/// Covariance of `R̄·exp(δφ^)·n_b` for `δφ ~ N(0, Σ)`, to first order.
pub fn propagate_normal_covariance(board_rotation: &Rotation, sigma_dphi: &Matrix3<f64>, n_board: &Vector3<f64>) -> Matrix3<f64> {
    let a = board_rotation.matrix() * skew(n_board);
    let s = a * sigma_dphi * a.transpose();
    0.5 * (s + s.transpose())
}

/// Default outline sampling pitch (m).
pub const DEFAULT_EDGE_PITCH: f64 = 0.005;

/// Full camera-side extraction for one frame.
pub fn extract_camera_features(
    corners: &CornerSet,
    spec: &BoardSpec,
    intr: &CameraIntrinsics,
    edge_pitch: f64,
) -> Result<CameraBoardFeatures> {
    let undistorted = if intr.has_distortion() {
        undistort_corners(corners, intr)?
    } else {
        corners.clone()
    };
    let (board_pose, cov) = estimate_board_pose(&undistorted, spec, intr)?;
    Ok(features_from_pose(&board_pose, &cov, spec, edge_pitch))
}

/// Plane, outline samples and normal covariance for a known board pose.
pub fn features_from_pose(board_pose: &Pose, rotation_covariance: &Matrix3<f64>, spec: &BoardSpec, edge_pitch: f64) -> CameraBoardFeatures {
    let normal = board_pose.rotation.rotate(&Vector3::z());
    let offset = -normal.dot(&board_pose.translation);
    let (edge_points, edge_tangents) = generate_edge_points(board_pose, spec, edge_pitch);
    CameraBoardFeatures {
        board_pose: *board_pose,
        normal,
        offset,
        normal_covariance: propagate_normal_covariance(&board_pose.rotation, rotation_covariance, &Vector3::z()),
        edge_points,
        edge_tangents,
        outline: spec.outline().map(|c| board_pose.transform_point(&c)),
    }
}

// ---------------------------------------------------------------------------
// Events
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub u: Vector2<f64>,
    pub t: f64,
    pub polarity: i8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventChunk {
    pub anchor: f64,
    pub events: Vec<Event>,
}

impl EventChunk {
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Default chunk duration (s).
pub const DEFAULT_CHUNK_DURATION: f64 = 0.05;

/// One chunk per anchor holding the events with `t ∈ [anchor − duration,
/// anchor]`. `stream` must be sorted by time.
pub fn chunk_events(stream: &[Event], anchors: &[f64], duration: f64) -> Vec<EventChunk> {
    anchors
        .iter()
        .map(|&anchor| {
            let lo = stream.partition_point(|e| e.t < anchor - duration);
            let hi = stream.partition_point(|e| e.t <= anchor);
            EventChunk {
                anchor,
                events: stream[lo..hi.max(lo)].to_vec(),
            }
        })
        .collect()
}

/// Per-pixel polarity sums, indexed `(row, col) = (v, u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EventImage {
    pub counts: DMatrix<i32>,
    /// Events outside the image that were skipped.
    pub skipped: usize,
}

pub fn accumulate_event_image(chunk: &[Event], intr: &CameraIntrinsics) -> EventImage {
    let mut counts = DMatrix::zeros(intr.height as usize, intr.width as usize);
    let mut skipped = 0;
    for e in chunk {
        if !intr.in_image(&e.u) {
            skipped += 1;
            continue;
        }
        counts[(e.u.y.floor() as usize, e.u.x.floor() as usize)] += e.polarity as i32;
    }
    EventImage { counts, skipped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::exp_so3;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::pinhole(600.0, 600.0, 640.0, 360.0, 1280, 720)
    }

    fn board(rows: usize, cols: usize) -> BoardSpec {
        BoardSpec {
            width: (cols + 1) as f64 * 0.1,
            height: (rows + 1) as f64 * 0.1,
            inner_rows: rows,
            inner_cols: cols,
            square_size: 0.1,
        }
    }

    fn project_all(pose: &Pose, spec: &BoardSpec, intr: &CameraIntrinsics) -> CornerSet {
        CornerSet {
            frame_id: 0,
            corners: spec
                .inner_corners()
                .iter()
                .map(|p| intr.project(&pose.transform_point(p)).unwrap())
                .collect(),
            detected: true,
        }
    }

    #[test]
    fn zero_distortion_is_identity() {
        let c = CornerSet {
            frame_id: 3,
            corners: vec![Vector2::new(10.0, 20.0), Vector2::new(1000.5, 700.25)],
            detected: true,
        };
        assert_eq!(undistort_corners(&c, &intr()).unwrap(), c);
    }

    #[test]
    fn undistortion_round_trip() {
        let mut k = intr();
        k.distortion = [-0.1, 0.01, 0.001, -0.0005, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let uv = Vector2::new(rng.random_range(0.0..1280.0), rng.random_range(0.0..720.0));
            let c = CornerSet {
                frame_id: 0,
                corners: vec![uv],
                detected: true,
            };
            let u = undistort_corners(&c, &k).unwrap();
            let back = k.normalized_to_pixel(&k.distort_normalized(&k.pixel_to_normalized(&u.corners[0])));
            assert!((back - uv).norm() <= 1e-6);
        }
    }

    #[test]
    fn undistortion_outside_model_fails() {
        let mut k = intr();
        k.distortion = [-0.1, 0.0, 0.0, 0.0, 0.0];
        let c = CornerSet {
            frame_id: 0,
            corners: vec![Vector2::new(640.0 + 600.0 * 5.0, 360.0)],
            detected: true,
        };
        assert!(matches!(undistort_corners(&c, &k), Err(Error::NonConvergence(_))));
    }

    #[test]
    fn board_pose_from_exact_corners() {
        let spec = board(5, 7);
        let gt = Pose::new(exp_so3(&Vector3::new(0.3, -0.4, 0.2)), Vector3::new(0.1, -0.05, 1.5));
        let (pose, _) = estimate_board_pose(&project_all(&gt, &spec, &intr()), &spec, &intr()).unwrap();
        assert!(pose.rotation.angle_to(&gt.rotation) <= 1e-6);
        assert!((pose.translation - gt.translation).norm() <= 1e-6);

        let facing = Pose::new(Rotation::identity(), Vector3::new(0.0, 0.0, 2.3));
        let (pose, _) = estimate_board_pose(&project_all(&facing, &spec, &intr()), &spec, &intr()).unwrap();
        assert!((pose.translation.z - 2.3).abs() <= 1e-6);
    }

    #[test]
    fn covariance_shrinks_with_more_corners() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let gt = Pose::new(exp_so3(&Vector3::new(0.2, 0.3, 0.0)), Vector3::new(0.0, 0.0, 2.0));
        let mut mean_trace = |spec: &BoardSpec| {
            let mut total = 0.0;
            for _ in 0..30 {
                let mut c = project_all(&gt, spec, &intr());
                for uv in c.corners.iter_mut() {
                    *uv += Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
                }
                total += estimate_board_pose(&c, spec, &intr()).unwrap().1.trace();
            }
            total / 30.0
        };
        let small = mean_trace(&board(4, 6));
        let large = mean_trace(&board(6, 9));
        assert!(large < small, "{large} !< {small}");
    }

    #[test]
    fn edge_points_on_unit_board() {
        let spec = BoardSpec {
            width: 1.0,
            height: 1.0,
            inner_rows: 2,
            inner_cols: 2,
            square_size: 0.3,
        };
        let (pts, tangents) = generate_edge_points(&Pose::identity(), &spec, 0.5);
        assert_eq!(pts.len(), 8);
        for p in &pts {
            assert!(p.x.abs() == 0.5 || p.y.abs() == 0.5);
            assert!(p.x.abs() == 0.5 || p.x == 0.0);
            assert!(p.y.abs() == 0.5 || p.y == 0.0);
        }
        assert_relative_eq!(tangents[0], -tangents[4], epsilon = 1e-12);
        assert_relative_eq!(tangents[2], -tangents[6], epsilon = 1e-12);
    }

    #[test]
    fn features_satisfy_plane_equation() {
        let spec = board(5, 7);
        let pose = Pose::new(exp_so3(&Vector3::new(-0.5, 0.4, 1.0)), Vector3::new(0.3, 0.2, 2.5));
        let f = features_from_pose(&pose, &(Matrix3::identity() * 1e-6), &spec, DEFAULT_EDGE_PITCH);
        assert_relative_eq!(f.normal.norm(), 1.0, epsilon = 1e-12);
        for p in &f.edge_points {
            assert!(f.signed_distance(p).abs() <= 1e-9);
        }
        for c in spec.inner_corners() {
            assert!(f.signed_distance(&pose.transform_point(&c)).abs() <= 1e-9);
        }
        let n = f.normal;
        assert!((n.transpose() * f.normal_covariance * n)[0] <= 1e-12 * f.normal_covariance.trace());
    }

    #[test]
    fn covariance_propagation_examples() {
        let n = Vector3::z();
        assert_eq!(propagate_normal_covariance(&Rotation::identity(), &Matrix3::zeros(), &n), Matrix3::zeros());
        let s = propagate_normal_covariance(&Rotation::identity(), &(Matrix3::identity() * 4e-4), &n);
        assert_relative_eq!(s, Matrix3::from_diagonal(&Vector3::new(4e-4, 4e-4, 0.0)), epsilon = 1e-18);
    }

    #[test]
    fn covariance_propagation_monte_carlo() {
        let r = exp_so3(&Vector3::new(0.4, -1.1, 0.3));
        let l = Matrix3::new(0.01, 0.0, 0.0, 0.003, 0.006, 0.0, -0.002, 0.001, 0.008);
        let sigma = l * l.transpose();
        let predicted = propagate_normal_covariance(&r, &sigma, &Vector3::z());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = Normal::new(0.0, 1.0).unwrap();
        let n = 100_000;
        let samples: Vec<Vector3<f64>> = (0..n)
            .map(|_| {
                let dphi = l * Vector3::new(g.sample(&mut rng), g.sample(&mut rng), g.sample(&mut rng));
                r.perturb_right(&dphi).rotate(&Vector3::z())
            })
            .collect();
        let mean = samples.iter().sum::<Vector3<f64>>() / n as f64;
        let mut emp = Matrix3::zeros();
        for s in &samples {
            emp += (s - mean) * (s - mean).transpose();
        }
        emp /= (n - 1) as f64;
        let rel = (emp - predicted).norm() / predicted.norm();
        assert!(rel < 0.05, "relative error {rel}");
    }

    proptest! {
        #[test]
        fn propagated_covariance_is_psd_and_tangent(
            phi in prop::array::uniform3(-3.0f64..3.0),
            d in prop::array::uniform3(0.0f64..1e-3),
        ) {
            let r = exp_so3(&Vector3::from(phi));
            let s = propagate_normal_covariance(&r, &Matrix3::from_diagonal(&Vector3::from(d)), &Vector3::z());
            let nc = r.rotate(&Vector3::z());
            let eig = s.symmetric_eigen();
            prop_assert!(eig.eigenvalues.iter().all(|&e| e >= -1e-15));
            prop_assert!((nc.transpose() * s * nc)[0].abs() <= 1e-12 * s.trace().max(1e-300));
        }
    }

    fn uniform_stream() -> Vec<Event> {
        (0..1000)
            .map(|k| Event {
                u: Vector2::new(1.0, 1.0),
                t: (k as f64 + 0.5) * 1e-3,
                polarity: if k % 2 == 0 { 1 } else { -1 },
            })
            .collect()
    }

    #[test]
    fn chunking_examples() {
        let stream = uniform_stream();
        let anchors: Vec<f64> = (1..10).map(|i| i as f64 * 0.1).collect();
        let chunks = chunk_events(&stream, &anchors, DEFAULT_CHUNK_DURATION);
        assert_eq!(DEFAULT_CHUNK_DURATION, 0.05);
        assert!(chunks.iter().all(|c| c.events.len() == 50));
        let early = chunk_events(&stream, &[-1.0], 0.05);
        assert!(early[0].is_empty());
    }

    #[test]
    fn event_image_examples() {
        let k = CameraIntrinsics::pinhole(100.0, 100.0, 5.0, 5.0, 10, 10);
        let img = accumulate_event_image(&[], &k);
        assert!(img.counts.iter().all(|&c| c == 0));
        let e = |x: f64, y: f64, p: i8| Event {
            u: Vector2::new(x, y),
            t: 0.0,
            polarity: p,
        };
        let img = accumulate_event_image(&[e(3.0, 4.0, 1)], &k);
        assert_eq!(img.counts[(4, 3)], 1);
        assert_eq!(img.counts.iter().map(|c| c.abs()).sum::<i32>(), 1);
        let img = accumulate_event_image(&[e(2.0, 2.0, 1), e(2.0, 2.0, -1), e(20.0, 2.0, 1)], &k);
        assert_eq!(img.counts[(2, 2)], 0);
        assert_eq!(img.skipped, 1);
    }
}
