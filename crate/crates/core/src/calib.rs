//! Extrinsic estimation from paired board features.
//!
//! [`calibrate`] initializes once from plane constraints over all frames,
//! then for every subset size `M` refines `I` random subsets with
//! point-to-plane and point-to-line terms, averages the refined poses and
//! keeps the average with the smallest geometric error on all frames.

use kiddo::{KdTree, SquaredEuclidean};
use nalgebra::{Matrix3, Matrix4, Vector3, Vector6};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{extract_camera_features, CameraBoardFeatures, CameraIntrinsics, CornerSet};
use crate::error::{Error, Result};
use crate::geom::{skew, Pose, Rotation};
use crate::lidar::{extract_lidar_features, BoardSpec, LidarBoardFeatures, LidarConfig, RingCloud, TrackingState};
use crate::metrics::{frame_error, mge};
use crate::qpep::{make_ptl_constraint, solve_ptpl_with, solve_wahba, PtplConstraint, SolverOptions};

/// Camera and LiDAR features of one synchronized frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameFeatures {
    pub frame_id: usize,
    pub camera: CameraBoardFeatures,
    pub lidar: LidarBoardFeatures,
}

/// Detection bookkeeping over a sequence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub n_detect: usize,
    pub n_total: usize,
    /// `(frame, reason)` for every frame without usable features.
    pub failures: Vec<(usize, String)>,
}

/// Runs both extractors on every frame. Frames failing either side are
/// left out and reported. With `tracking`, LiDAR frames are processed in
/// order and each search starts from the previous board.
pub fn extract_frames(
    clouds: &[RingCloud],
    corners: &[CornerSet],
    spec: &BoardSpec,
    intr: &CameraIntrinsics,
    lidar_config: &LidarConfig,
    edge_pitch: f64,
    tracking: bool,
) -> (Vec<FrameFeatures>, DetectionSummary) {
    let n = clouds.len().min(corners.len());
    let lidar: Vec<Result<LidarBoardFeatures>> = if tracking {
        let mut state = TrackingState::default();
        clouds[..n]
            .iter()
            .map(|c| extract_lidar_features(c, spec, &mut state, lidar_config))
            .collect()
    } else {
        clouds[..n]
            .par_iter()
            .map(|c| extract_lidar_features(c, spec, &mut TrackingState::default(), lidar_config))
            .collect()
    };
    let camera: Vec<Result<CameraBoardFeatures>> = corners[..n]
        .par_iter()
        .map(|c| extract_camera_features(c, spec, intr, edge_pitch))
        .collect();
    let mut frames = Vec::new();
    let mut summary = DetectionSummary {
        n_total: n,
        ..Default::default()
    };
    for (i, (l, c)) in lidar.into_iter().zip(camera).enumerate() {
        match (l, c) {
            (Ok(lidar), Ok(camera)) => frames.push(FrameFeatures {
                frame_id: i,
                camera,
                lidar,
            }),
            (Err(e), _) => summary.failures.push((i, format!("lidar: {e}"))),
            (_, Err(e)) => summary.failures.push((i, format!("camera: {e}"))),
        }
    }
    summary.n_detect = frames.len();
    (frames, summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibConfig {
    /// Random subsets refined per subset size.
    pub iterations: usize,
    pub w_ptpl: f64,
    pub w_ptl: f64,
    /// Fraction of plane terms with the largest propagated variance that
    /// is dropped before each solve.
    pub variance_drop_fraction: f64,
    /// Edge matches farther apart than this are discarded (m).
    pub edge_gate: f64,
    /// Planar points per frame used for initialization.
    pub init_points_per_frame: usize,
    pub rng_seed: u64,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            w_ptpl: 1.0,
            w_ptl: 10.0,
            variance_drop_fraction: 0.10,
            edge_gate: 0.1,
            init_points_per_frame: 200,
            rng_seed: 0,
        }
    }
}

/// Spread of a ring end point from azimuth quantization (m): a uniform
/// error over a 1 cm step.
pub const EDGE_QUANTIZATION_SIGMA: f64 = 0.003;

impl CalibConfig {
    /// Scales `w_ptl` by the share of range noise in the edge-point error,
    /// `σ² / (σ² + σ_q²)`. Noise-free planes pin the pose exactly while ring
    /// end points keep their quantization error, so edges fade out as σ → 0.
    pub fn adapted_to_range_noise(&self, sigma: f64) -> Self {
        let s2 = sigma * sigma;
        Self {
            w_ptl: self.w_ptl * s2 / (s2 + EDGE_QUANTIZATION_SIGMA * EDGE_QUANTIZATION_SIGMA),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.w_ptpl >= 0.0 && self.w_ptl >= 0.0) || self.w_ptpl + self.w_ptl == 0.0 {
            return Err(Error::Config("weights must be non-negative and not both zero".into()));
        }
        if !(0.0..=0.5).contains(&self.variance_drop_fraction) {
            return Err(Error::Config("variance_drop_fraction must lie in [0, 0.5]".into()));
        }
        if !(self.edge_gate > 0.0) {
            return Err(Error::Config("edge_gate must be positive".into()));
        }
        Ok(())
    }
}

/// Averaged candidate for one subset size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateStats {
    pub m: usize,
    pub pose: Pose,
    /// Refined subsets that went into the average.
    pub count: usize,
    /// Mean geodesic distance of the members to the average (deg).
    pub rotation_spread_deg: f64,
    /// Mean distance of the member translations to the average (m).
    pub translation_spread_m: f64,
    pub mge: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// LiDAR-to-camera pose `T^c_l`.
    pub extrinsics: Pose,
    pub best_m: usize,
    pub initial: Pose,
    pub candidates: Vec<CandidateStats>,
    pub mge: f64,
    pub mpe: f64,
    pub mee: f64,
    /// Geometric error of the result on each frame, in input order.
    pub per_frame_errors: Vec<f64>,
}

impl CalibrationResult {
    pub fn candidate_poses(&self) -> Vec<Pose> {
        self.candidates.iter().map(|c| c.pose).collect()
    }
}

/// Plane terms `n^c·(R·p + t) + d^c` for the planar points of one frame.
fn plane_constraints(frame: &FrameFeatures, weight: f64, stride: usize) -> impl Iterator<Item = PtplConstraint> + '_ {
    let n = frame.camera.normal;
    let anchor = -frame.camera.offset * n;
    frame
        .lidar
        .planar_points
        .iter()
        .step_by(stride.max(1))
        .map(move |p| PtplConstraint::new(n, anchor, *p).with_weight(weight))
}

/// Requires three board normals that are pairwise ≥ 10° apart and not
/// within 10° of a common plane.
fn check_observability(frames: &[FrameFeatures]) -> Result<()> {
    let min_sin = 10f64.to_radians().sin();
    let normals: Vec<Vector3<f64>> = frames.iter().map(|f| f.camera.normal).collect();
    let Some(&a) = normals.first() else {
        return Err(Error::DegeneratePoses("no frames".into()));
    };
    let Some(b) = normals.iter().find(|n| a.cross(n).norm() >= min_sin) else {
        return Err(Error::DegeneratePoses("all board normals within 10° of each other".into()));
    };
    let axis = a.cross(b).normalize();
    if normals.iter().any(|n| axis.dot(n).abs() >= min_sin) {
        Ok(())
    } else {
        Err(Error::DegeneratePoses("board normals span only two directions".into()))
    }
}

/// Point-to-plane estimate over all frames, seeded with the rotation that
/// aligns LiDAR and camera board normals.
pub fn initialize_extrinsics(frames: &[FrameFeatures], config: &CalibConfig) -> Result<Pose> {
    check_observability(frames)?;
    let mut constraints = Vec::new();
    for f in frames {
        let stride = f.lidar.planar_points.len().div_ceil(config.init_points_per_frame.max(1));
        constraints.extend(plane_constraints(f, 1.0, stride));
    }
    // LiDAR normals point toward the LiDAR, camera normals are the board z
    // axis; orient both toward their sensor before aligning.
    let pairs: Vec<(Vector3<f64>, Vector3<f64>, f64)> = frames
        .iter()
        .map(|f| {
            let nc = if f.camera.offset < 0.0 { -f.camera.normal } else { f.camera.normal };
            (f.lidar.plane.normal, nc, 1.0)
        })
        .collect();
    let mut options = SolverOptions::default();
    if let Ok(seed) = solve_wahba(&pairs) {
        options.extra_seeds.push(seed);
    }
    Ok(solve_ptpl_with(&constraints, &options)?.pose)
}

/// A LiDAR edge point paired with the camera-frame outline line through
/// its nearest outline sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeMatch {
    pub point: Vector3<f64>,
    pub anchor: Vector3<f64>,
    pub tangent: Vector3<f64>,
    /// Normal of the board the line belongs to.
    pub board_normal: Vector3<f64>,
    pub weight: f64,
}

impl EdgeMatch {
    /// Point-to-line residual vector `(I − vvᵀ)(R·p + t − q)`.
    pub fn residual(&self, pose: &Pose) -> Vector3<f64> {
        let d = pose.transform_point(&self.point) - self.anchor;
        d - self.tangent * self.tangent.dot(&d)
    }

    /// Folds the line term into a plane term at `current`. Points already
    /// on the line use the in-plane perpendicular of the edge.
    pub fn to_constraint(&self, current: &Pose) -> PtplConstraint {
        make_ptl_constraint(self.anchor, self.tangent, self.point, current)
            .unwrap_or_else(|_| {
                PtplConstraint::new(self.tangent.cross(&self.board_normal).normalize(), self.anchor, self.point)
            })
            .with_weight(self.weight)
    }

    /// The line term as two plane terms across the line: one in the board
    /// plane, one along the board normal. Their squared residuals sum to
    /// the squared point-to-line distance at every pose.
    pub fn to_constraints(&self) -> [PtplConstraint; 2] {
        let across = self.tangent.cross(&self.board_normal).normalize();
        let out = self.tangent.cross(&across).normalize();
        [across, out].map(|n| PtplConstraint::new(n, self.anchor, self.point).with_weight(self.weight))
    }
}

/// Nearest-outline-sample matches for the edge points of one frame.
pub fn match_edges(lidar: &LidarBoardFeatures, camera: &CameraBoardFeatures, current: &Pose, gate: f64, weight: f64) -> Vec<EdgeMatch> {
    if camera.edge_points.is_empty() {
        return Vec::new();
    }
    let mut tree: KdTree<f64, 3> = KdTree::with_capacity(camera.edge_points.len());
    for (i, p) in camera.edge_points.iter().enumerate() {
        tree.add(&[p.x, p.y, p.z], i as u64);
    }
    lidar
        .edge_points
        .iter()
        .filter_map(|p| {
            let q = current.transform_point(p);
            let nn = tree.nearest_one::<SquaredEuclidean>(&[q.x, q.y, q.z]);
            (nn.distance <= gate * gate).then(|| {
                let i = nn.item as usize;
                EdgeMatch {
                    point: *p,
                    anchor: camera.edge_points[i],
                    tangent: camera.edge_tangents[i],
                    board_normal: camera.normal,
                    weight,
                }
            })
        })
        .collect()
}

/// Edge terms for one frame as point-to-plane constraints.
pub fn associate_edges(
    lidar: &LidarBoardFeatures,
    camera: &CameraBoardFeatures,
    current: &Pose,
    gate: f64,
) -> Vec<PtplConstraint> {
    match_edges(lidar, camera, current, gate, 1.0)
        .iter()
        .map(|m| m.to_constraint(current))
        .collect()
}

/// Drops the `drop_fraction` of constraints with the largest
/// `σ² = (R·p + t)ᵀ Σ (R·p + t)`; `covariances[i]` belongs to
/// `constraints[i]`. Ties keep the lower index.
pub fn filter_by_variance(
    constraints: &[PtplConstraint],
    covariances: &[Matrix3<f64>],
    current: &Pose,
    drop_fraction: f64,
) -> Vec<PtplConstraint> {
    let drop = (constraints.len() as f64 * drop_fraction).round() as usize;
    if drop == 0 {
        return constraints.to_vec();
    }
    let variance: Vec<f64> = constraints
        .iter()
        .zip(covariances)
        .map(|(c, s)| {
            let x = current.transform_point(&c.point);
            x.dot(&(s * x))
        })
        .collect();
    let mut order: Vec<usize> = (0..constraints.len()).collect();
    order.select_nth_unstable_by(drop - 1, |&a, &b| variance[b].total_cmp(&variance[a]).then(b.cmp(&a)));
    let mut keep = vec![true; constraints.len()];
    for &i in &order[..drop] {
        keep[i] = false;
    }
    constraints
        .iter()
        .zip(keep)
        .filter_map(|(c, k)| k.then_some(*c))
        .collect()
}

/// Weighted sum of squared plane and line residuals, with its gradient
/// with respect to `(δφ, δt)`.
pub fn refinement_objective(planes: &[PtplConstraint], edges: &[EdgeMatch], pose: &Pose) -> (f64, Vector6<f64>) {
    let r = pose.rotation.matrix();
    let mut value = 0.0;
    let mut grad = Vector6::zeros();
    for c in planes {
        let e = -c.residual(pose);
        // d(R·p)/dδφ = −R·p^
        let jr = -(c.normal.transpose() * r * skew(&c.point)).transpose();
        value += c.weight * e * e;
        grad.fixed_rows_mut::<3>(0).axpy(2.0 * c.weight * e, &jr, 1.0);
        grad.fixed_rows_mut::<3>(3).axpy(2.0 * c.weight * e, &c.normal, 1.0);
    }
    for m in edges {
        let res = m.residual(pose);
        let proj = Matrix3::identity() - m.tangent * m.tangent.transpose();
        let jr = -proj * r * skew(&m.point);
        value += m.weight * res.norm_squared();
        grad.fixed_rows_mut::<3>(0).axpy(2.0 * m.weight, &(jr.transpose() * res), 1.0);
        grad.fixed_rows_mut::<3>(3).axpy(2.0 * m.weight, &(proj * res), 1.0);
    }
    (value, grad)
}

/// Plane and edge terms of `frames` at `current`, after variance filtering.
fn build_terms(frames: &[&FrameFeatures], current: &Pose, config: &CalibConfig) -> (Vec<PtplConstraint>, Vec<EdgeMatch>) {
    let mut planes = Vec::new();
    let mut covs = Vec::new();
    let mut edges = Vec::new();
    for f in frames {
        if config.w_ptpl > 0.0 {
            planes.extend(plane_constraints(f, config.w_ptpl, 1));
            covs.resize(planes.len(), f.camera.normal_covariance);
        }
        if config.w_ptl > 0.0 {
            edges.extend(match_edges(&f.lidar, &f.camera, current, config.edge_gate, config.w_ptl));
        }
    }
    let planes = filter_by_variance(&planes, &covs, current, config.variance_drop_fraction);
    (planes, edges)
}

/// Two rounds of weighted plane + edge solves starting from `init`; edges
/// are re-associated from the first round's result.
pub fn refine(frames: &[&FrameFeatures], init: &Pose, config: &CalibConfig) -> Result<Pose> {
    let mut current = *init;
    for _ in 0..2 {
        let (planes, edges) = build_terms(frames, &current, config);
        let mut all = planes;
        all.extend(edges.iter().flat_map(EdgeMatch::to_constraints));
        // The grid spot-check is skipped inside the subset loop; the
        // multi-start search alone decides the minimum.
        let options = SolverOptions {
            extra_seeds: vec![current.rotation],
            certify: false,
        };
        current = solve_ptpl_with(&all, &options)?.pose;
    }
    Ok(current)
}

/// Chordal mean of the rotations and arithmetic mean of the translations.
pub fn average_poses(poses: &[Pose]) -> Pose {
    assert!(!poses.is_empty(), "average of no poses");
    let q0 = poses[0].rotation.to_quaternion_wxyz();
    let mut acc = Matrix4::zeros();
    let mut t = Vector3::zeros();
    for p in poses {
        let q = p.rotation.to_quaternion_wxyz();
        let sign = if q.iter().zip(&q0).map(|(a, b)| a * b).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
        let v = nalgebra::Vector4::new(q[0], q[1], q[2], q[3]) * sign;
        acc += v * v.transpose();
        t += p.translation;
    }
    let eig = acc.symmetric_eigen();
    let v = eig.eigenvectors.column(eig.eigenvalues.imax());
    Pose::new(
        Rotation::from_quaternion_wxyz([v[0], v[1], v[2], v[3]]),
        t / poses.len() as f64,
    )
}

fn subset_seed(base: u64, m: usize, attempt: usize) -> u64 {
    base ^ (m as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (attempt as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Refined poses for `iterations` random subsets of size `m`. Failed
/// refinements are retried with new subsets, up to ten times as many
/// attempts as requested iterations.
fn refine_subsets(frames: &[FrameFeatures], m: usize, init: &Pose, config: &CalibConfig) -> Vec<Pose> {
    let n = frames.len();
    let want = if m == n { 1 } else { config.iterations };
    let mut poses = Vec::with_capacity(want);
    let mut next = 0;
    while poses.len() < want && next < 10 * config.iterations {
        let batch: Vec<usize> = (next..(next + want - poses.len()).min(10 * config.iterations)).collect();
        next += batch.len();
        let results: Vec<Option<Pose>> = batch
            .par_iter()
            .map(|&attempt| {
                let mut rng = ChaCha8Rng::seed_from_u64(subset_seed(config.rng_seed, m, attempt));
                let mut idx = sample(&mut rng, n, m).into_vec();
                idx.sort_unstable();
                let subset: Vec<&FrameFeatures> = idx.iter().map(|&i| &frames[i]).collect();
                match refine(&subset, init, config) {
                    Ok(p) => Some(p),
                    Err(e) => {
                        log::debug!("M = {m}, attempt {attempt}: {e}");
                        None
                    }
                }
            })
            .collect();
        poses.extend(results.into_iter().flatten());
    }
    poses
}

/// Full estimation over all frames.
pub fn calibrate(frames: &[FrameFeatures], config: &CalibConfig) -> Result<CalibrationResult> {
    config.validate()?;
    if frames.len() < 3 {
        return Err(Error::DegeneratePoses(format!(
            "{} frame(s); at least 3 boards with distinct orientations are needed",
            frames.len()
        )));
    }
    let initial = initialize_extrinsics(frames, config)?;
    let mut candidates = Vec::new();
    for m in 1..=frames.len() {
        let poses = refine_subsets(frames, m, &initial, config);
        if poses.is_empty() {
            log::warn!("no successful refinement for M = {m}");
            continue;
        }
        let pose = average_poses(&poses);
        let count = poses.len() as f64;
        candidates.push(CandidateStats {
            m,
            pose,
            count: poses.len(),
            rotation_spread_deg: poses.iter().map(|p| p.rotation.angle_to(&pose.rotation).to_degrees()).sum::<f64>() / count,
            translation_spread_m: poses.iter().map(|p| (p.translation - pose.translation).norm()).sum::<f64>() / count,
            mge: mge(&pose, frames).0,
        });
    }
    let best = candidates
        .iter()
        .min_by(|a, b| a.mge.total_cmp(&b.mge).then(a.m.cmp(&b.m)))
        .ok_or_else(|| Error::NonConvergence("every refinement failed".into()))?;
    let (mge_v, mpe, mee) = mge(&best.pose, frames);
    Ok(CalibrationResult {
        extrinsics: best.pose,
        best_m: best.m,
        initial,
        per_frame_errors: frames.iter().map(|f| frame_error(&best.pose, f).mge()).collect(),
        mge: mge_v,
        mpe,
        mee,
        candidates,
    })
}
