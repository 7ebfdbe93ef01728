//! Board selection and feature extraction from ring-structured scans.
//!
//! Selection runs ring split → per-ring line segments → linearity/length
//! filter → DBSCAN → template verification. Extraction fits the board
//! plane with RANSAC, projects the inliers onto it and takes the end
//! points of every ring as edge points. Once a board has been found, the
//! next frame is cropped to an inflated box around it and selection is
//! skipped until detection fails again.

use kiddo::{KdTree, SquaredEuclidean};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qpep::solve_point_registration_3d3d;
use crate::geom::{Pose, Rotation};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint {
    pub xyz: Vector3<f64>,
    pub ring: Option<u16>,
    pub timestamp: Option<f64>,
}

impl LidarPoint {
    pub fn new(xyz: Vector3<f64>, ring: Option<u16>) -> Self {
        Self {
            xyz,
            ring,
            timestamp: None,
        }
    }

    /// Elevation angle `atan(z / √(x² + y²))`.
    pub fn pitch(&self) -> f64 {
        self.xyz.z.atan2(self.xyz.xy().norm())
    }

    pub fn azimuth(&self) -> f64 {
        self.xyz.y.atan2(self.xyz.x)
    }
}

/// One LiDAR sweep.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RingCloud {
    pub points: Vec<LidarPoint>,
    pub ring_count: usize,
}

impl RingCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Rectangular checkerboard geometry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoardSpec {
    /// Outer board width (m), along the board x axis.
    pub width: f64,
    /// Outer board height (m), along the board y axis.
    pub height: f64,
    pub inner_rows: usize,
    pub inner_cols: usize,
    pub square_size: f64,
}

impl BoardSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.width > 0.0
            && self.height > 0.0
            && self.square_size > 0.0
            && self.inner_rows > 0
            && self.inner_cols > 0
            && (self.inner_cols - 1) as f64 * self.square_size <= self.width
            && (self.inner_rows - 1) as f64 * self.square_size <= self.height;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid board spec {self:?}")))
        }
    }

    /// Inner corners in the board frame (origin at the board centre,
    /// z = 0), row-major.
    pub fn inner_corners(&self) -> Vec<Vector3<f64>> {
        let cx = (self.inner_cols - 1) as f64 * 0.5;
        let cy = (self.inner_rows - 1) as f64 * 0.5;
        let mut out = Vec::with_capacity(self.inner_rows * self.inner_cols);
        for r in 0..self.inner_rows {
            for c in 0..self.inner_cols {
                out.push(Vector3::new(
                    (c as f64 - cx) * self.square_size,
                    (r as f64 - cy) * self.square_size,
                    0.0,
                ));
            }
        }
        out
    }

    /// Outer corners in the board frame, counter-clockwise.
    pub fn outline(&self) -> [Vector3<f64>; 4] {
        let (w, h) = (self.width * 0.5, self.height * 0.5);
        [
            Vector3::new(-w, -h, 0.0),
            Vector3::new(w, -h, 0.0),
            Vector3::new(w, h, 0.0),
            Vector3::new(-w, h, 0.0),
        ]
    }

    /// Regular grid of points covering the board rectangle.
    pub fn template(&self, pitch: f64) -> Vec<Vector3<f64>> {
        let nx = (self.width / pitch).round().max(1.0) as usize;
        let ny = (self.height / pitch).round().max(1.0) as usize;
        let mut out = Vec::with_capacity((nx + 1) * (ny + 1));
        for i in 0..=nx {
            for j in 0..=ny {
                out.push(Vector3::new(
                    -self.width * 0.5 + self.width * i as f64 / nx as f64,
                    -self.height * 0.5 + self.height * j as f64 / ny as f64,
                    0.0,
                ));
            }
        }
        out
    }
}

/// Contiguous run of points from one ring.
#[derive(Clone, Debug, PartialEq)]
pub struct LineSegment {
    /// Indices into the cloud, in azimuth order.
    pub indices: Vec<usize>,
    /// Principal variances `σ1 ≥ σ2 ≥ σ3 ≥ 0`.
    pub pca_sigmas: [f64; 3],
    /// Distance between the first and last point (m).
    pub length: f64,
}

impl LineSegment {
    /// `σ1 / (σ1 + σ2 + σ3)` after removing an isotropic range-noise
    /// variance from the minor components.
    pub fn linearity(&self, noise_var: f64) -> f64 {
        let [s1, s2, s3] = self.pca_sigmas;
        let s2 = (s2 - noise_var).max(0.0);
        let s3 = (s3 - noise_var).max(0.0);
        let total = s1 + s2 + s3;
        if total > 0.0 {
            s1 / total
        } else {
            0.0
        }
    }
}

/// Plane `n·x + d = 0` with `d > 0` (normal faces the sensor).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneFeature {
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub inlier_indices: Vec<usize>,
    pub rms_distance: f64,
}

impl PlaneFeature {
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) + self.offset
    }

    /// The point of the plane closest to the origin.
    pub fn anchor(&self) -> Vector3<f64> {
        -self.offset * self.normal
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut b = Aabb {
            min: first,
            max: first,
        };
        for p in it {
            b.min = b.min.inf(p);
            b.max = b.max.sup(p);
        }
        Some(b)
    }

    pub fn inflate(&self, margin: f64) -> Self {
        Aabb {
            min: self.min.add_scalar(-margin),
            max: self.max.add_scalar(margin),
        }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Board features from one LiDAR frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LidarBoardFeatures {
    pub plane: PlaneFeature,
    pub planar_points: Vec<Vector3<f64>>,
    pub edge_points: Vec<Vector3<f64>>,
    pub bounding_box: Aabb,
    /// Template registration error of the selected cluster (m).
    pub registration_error: f64,
}

/// Thresholds for the LiDAR side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarConfig {
    /// Consecutive-point distance that starts a new segment (m).
    pub gap_threshold: f64,
    /// Minimum segment linearity (μ1).
    pub linearity_min: f64,
    /// Maximum segment length (μ2, m).
    pub max_segment_length: f64,
    /// Expected range-noise standard deviation (m); its variance is removed
    /// from the minor PCA components before the linearity test.
    pub range_noise_sigma: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    pub min_cluster_size: usize,
    pub template_pitch: f64,
    pub icp_iterations: usize,
    /// Clusters whose registration error exceeds this are not boards (m).
    pub reject_threshold: f64,
    pub ransac_threshold: f64,
    pub ransac_iterations: usize,
    pub tracking_margin: f64,
    /// Project planar and edge points onto the fitted plane.
    pub project_points: bool,
    /// Refit the board plane treating the residuals as range errors along
    /// each ray (see [`refit_plane_along_rays`]).
    pub ray_refit: bool,
    /// With `project_points`, place edge points where their ray meets the
    /// plane (see [`intersect_ray_with_plane`]) instead of projecting them
    /// orthogonally.
    pub edges_along_rays: bool,
    /// Move each ring end outward by half its spacing to the neighbouring
    /// point (see [`extract_centered_edge_points`]).
    pub centered_edges: bool,
    pub seed: u64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            gap_threshold: 0.1,
            linearity_min: 0.9,
            max_segment_length: 1.0,
            range_noise_sigma: 0.0,
            dbscan_eps: 0.2,
            dbscan_min_pts: 5,
            min_cluster_size: 30,
            template_pitch: 0.02,
            icp_iterations: 20,
            reject_threshold: 0.05,
            ransac_threshold: 0.02,
            ransac_iterations: 200,
            tracking_margin: 0.3,
            project_points: true,
            ray_refit: true,
            edges_along_rays: true,
            centered_edges: true,
            seed: 0,
        }
    }
}

impl LidarConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gap_threshold", self.gap_threshold),
            ("linearity_min", self.linearity_min),
            ("max_segment_length", self.max_segment_length),
            ("dbscan_eps", self.dbscan_eps),
            ("template_pitch", self.template_pitch),
            ("reject_threshold", self.reject_threshold),
            ("ransac_threshold", self.ransac_threshold),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
        if self.linearity_min > 1.0 {
            return Err(Error::Config("linearity_min must not exceed 1".into()));
        }
        if !(self.range_noise_sigma >= 0.0 && self.tracking_margin >= 0.0) {
            return Err(Error::Config("range_noise_sigma and tracking_margin must be non-negative".into()));
        }
        if self.dbscan_min_pts == 0 || self.min_cluster_size == 0 || self.icp_iterations == 0 || self.ransac_iterations == 0 {
            return Err(Error::Config("counts must be at least 1".into()));
        }
        Ok(())
    }

    /// Widens the noise-sensitive thresholds for a known range-noise level.
    pub fn adapted_to_range_noise(sigma: f64) -> Self {
        let base = Self::default();
        Self {
            gap_threshold: base.gap_threshold.max(5.0 * sigma),
            max_segment_length: base.max_segment_length + 5.0 * sigma,
            range_noise_sigma: sigma,
            reject_threshold: base.reject_threshold + sigma,
            ransac_threshold: base.ransac_threshold.max(2.5 * sigma),
            ..base
        }
    }
}

/// Board tracking state for one sequence.
#[derive(Clone, Debug, Default)]
pub struct TrackingState {
    pub previous: Option<LidarBoardFeatures>,
}

impl TrackingState {
    pub fn is_active(&self) -> bool {
        self.previous.is_some()
    }

    pub fn reset(&mut self) {
        self.previous = None;
    }
}

// ---------------------------------------------------------------------------
// Selection
// ---------------------------------------------------------------------------

/// Groups points into rings, each ordered by azimuth.
///
/// Uses the ring field when every point has one; otherwise clusters the
/// pitch angles into `ring_count` bins with 1-D k-means.
pub fn split_rings(cloud: &RingCloud) -> Result<Vec<Vec<usize>>> {
    if cloud.is_empty() {
        return Err(Error::DegenerateInput("empty cloud".into()));
    }
    let labels: Vec<usize> = if cloud.points.iter().all(|p| p.ring.is_some()) {
        cloud.points.iter().map(|p| p.ring.unwrap_or(0) as usize).collect()
    } else {
        kmeans_pitch(cloud)?
    };
    let count = cloud
        .ring_count
        .max(labels.iter().copied().max().map_or(0, |m| m + 1));
    let mut rings = vec![Vec::new(); count];
    for (i, &l) in labels.iter().enumerate() {
        rings[l].push(i);
    }
    for ring in rings.iter_mut() {
        ring.sort_by(|&a, &b| {
            cloud.points[a]
                .azimuth()
                .total_cmp(&cloud.points[b].azimuth())
                .then(a.cmp(&b))
        });
    }
    Ok(rings)
}

fn kmeans_pitch(cloud: &RingCloud) -> Result<Vec<usize>> {
    let k = cloud.ring_count.max(1);
    let pitch: Vec<f64> = cloud.points.iter().map(LidarPoint::pitch).collect();
    let lo = pitch.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pitch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut centers: Vec<f64> = (0..k)
        .map(|i| {
            if k == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * i as f64 / (k - 1) as f64
            }
        })
        .collect();
    let mut labels = vec![0usize; pitch.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (i, &p) in pitch.iter().enumerate() {
            // Centers stay sorted, so a binary search finds the nearest one.
            let pos = centers.partition_point(|&c| c < p);
            let best = if pos == 0 {
                0
            } else if pos == k {
                k - 1
            } else if p - centers[pos - 1] <= centers[pos] - p {
                pos - 1
            } else {
                pos
            };
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![(0.0, 0usize); k];
        for (i, &l) in labels.iter().enumerate() {
            sums[l].0 += pitch[i];
            sums[l].1 += 1;
        }
        if let Some(empty) = sums.iter().position(|s| s.1 == 0) {
            return Err(Error::RingAmbiguity(empty));
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            *c = s.0 / s.1 as f64;
        }
        if !changed {
            break;
        }
    }
    Ok(labels)
}

/// Principal variances of a point set, descending, with the matching axes
/// as matrix columns.
pub(crate) fn pca(points: &[Vector3<f64>]) -> (Vector3<f64>, [f64; 3], Matrix3<f64>) {
    let n = points.len().max(1) as f64;
    let mean = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let sigmas = order.map(|i| eig.eigenvalues[i].max(0.0));
    let mut axes = Matrix3::zeros();
    for (col, &i) in order.iter().enumerate() {
        axes.set_column(col, &eig.eigenvectors.column(i));
    }
    (mean, sigmas, axes)
}

/// Splits one azimuth-ordered ring into segments at gaps.
pub fn segment_ring(cloud: &RingCloud, ring: &[usize], gap_threshold: f64) -> Vec<LineSegment> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let finish = |current: &mut Vec<usize>, out: &mut Vec<LineSegment>| {
        if current.is_empty() {
            return;
        }
        let pts: Vec<Vector3<f64>> = current.iter().map(|&i| cloud.points[i].xyz).collect();
        let (_, sigmas, _) = pca(&pts);
        let length = (pts[pts.len() - 1] - pts[0]).norm();
        out.push(LineSegment {
            indices: std::mem::take(current),
            pca_sigmas: sigmas,
            length,
        });
    };
    for &idx in ring {
        if let Some(&last) = current.last() {
            if (cloud.points[idx].xyz - cloud.points[last].xyz).norm() > gap_threshold {
                finish(&mut current, &mut out);
            }
        }
        current.push(idx);
    }
    finish(&mut current, &mut out);
    out
}

/// Keeps straight, short segments: linearity ≥ `mu1` and length ≤ `mu2`.
pub fn filter_segments(segments: Vec<LineSegment>, mu1: f64, mu2: f64, range_noise_sigma: f64) -> Vec<LineSegment> {
    let noise_var = range_noise_sigma * range_noise_sigma;
    segments
        .into_iter()
        .filter(|s| s.indices.len() >= 3 && s.linearity(noise_var) >= mu1 && s.length <= mu2)
        .collect()
}

pub(crate) fn build_tree(points: &[Vector3<f64>]) -> KdTree<f64, 3> {
    let mut tree: KdTree<f64, 3> = KdTree::with_capacity(points.len().max(1));
    for (i, p) in points.iter().enumerate() {
        tree.add(&[p.x, p.y, p.z], i as u64);
    }
    tree
}

/// DBSCAN over Euclidean 3-space. Noise and clusters below
/// `min_cluster_size` are dropped; clusters are ordered by their first
/// point index.
pub fn cluster_dbscan(points: &[Vector3<f64>], eps: f64, min_pts: usize, min_cluster_size: usize) -> Vec<Vec<usize>> {
    const UNVISITED: usize = usize::MAX;
    const NOISE: usize = usize::MAX - 1;
    let tree = build_tree(points);
    let neighbours = |i: usize| -> Vec<usize> {
        let p = points[i];
        let mut n: Vec<usize> = tree
            .within_unsorted::<SquaredEuclidean>(&[p.x, p.y, p.z], eps * eps)
            .into_iter()
            .map(|nn| nn.item as usize)
            .collect();
        n.sort_unstable();
        n
    };
    let mut label = vec![UNVISITED; points.len()];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in 0..points.len() {
        if label[i] != UNVISITED {
            continue;
        }
        let seeds = neighbours(i);
        if seeds.len() < min_pts {
            label[i] = NOISE;
            continue;
        }
        let id = clusters.len();
        let mut members = vec![i];
        label[i] = id;
        let mut queue: std::collections::VecDeque<usize> = seeds.into_iter().filter(|&j| j != i).collect();
        while let Some(j) = queue.pop_front() {
            if label[j] == NOISE {
                label[j] = id;
                members.push(j);
            }
            if label[j] != UNVISITED {
                continue;
            }
            label[j] = id;
            members.push(j);
            let nb = neighbours(j);
            if nb.len() >= min_pts {
                queue.extend(nb.into_iter().filter(|&k| label[k] == UNVISITED || label[k] == NOISE));
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }
    clusters.retain(|c| c.len() >= min_cluster_size);
    clusters
}

const ICP_COARSE_ITERATIONS: usize = 5;
const ICP_KEPT_HYPOTHESES: usize = 4;

/// Symmetric RMS nearest-neighbour distance between two point sets,
/// `√(½·(rms(a→b)² + rms(b→a)²))`.
fn symmetric_rms(a: &[Vector3<f64>], tree_a: &KdTree<f64, 3>, b: &[Vector3<f64>], tree_b: &KdTree<f64, 3>) -> f64 {
    let mean_sq = |src: &[Vector3<f64>], tree: &KdTree<f64, 3>| {
        src.iter()
            .map(|p| tree.nearest_one::<SquaredEuclidean>(&[p.x, p.y, p.z]).distance)
            .sum::<f64>()
            / src.len().max(1) as f64
    };
    (0.5 * (mean_sq(a, tree_b) + mean_sq(b, tree_a))).sqrt()
}

/// Registers a cluster to the board template; returns the error and the
/// pose taking the flattened cluster onto the template.
///
/// The cluster is flattened onto its best-fit plane first, so range noise
/// across the plane does not count as shape mismatch.
fn register_to_template(
    cluster: &[Vector3<f64>],
    template: &[Vector3<f64>],
    template_tree: &KdTree<f64, 3>,
    icp_iterations: usize,
) -> (f64, Pose) {
    let (mean, _, axes) = pca(cluster);
    let mut axes = axes;
    if axes.determinant() < 0.0 {
        axes.set_column(2, &(-axes.column(2)));
    }
    let normal: Vector3<f64> = axes.column(2).into_owned();
    let flat: Vec<Vector3<f64>> = cluster.iter().map(|p| p - normal * normal.dot(&(p - mean))).collect();
    let cluster = flat.as_slice();
    // Both faces, with in-plane starts every 30°: partial ring coverage
    // makes the PCA axes an unreliable guess for the board axes.
    let mut starts = Vec::with_capacity(24);
    for flip in [Vector3::new(1.0, 1.0, 1.0), Vector3::new(1.0, -1.0, -1.0)] {
        for k in 0..12 {
            let spin = Rotation::exp(&(Vector3::z() * (k as f64 * 30f64.to_radians())));
            starts.push(spin.matrix() * Matrix3::from_diagonal(&flip) * axes.transpose());
        }
    }
    // Short ICP runs from every start, then full runs from the most promising.
    let icp = |pose: &mut Pose, iterations: usize| -> f64 {
        let mut mean_sq = f64::INFINITY;
        for _ in 0..iterations {
            let mut sum = 0.0;
            let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = cluster
                .iter()
                .map(|p| {
                    let q = pose.transform_point(p);
                    let nn = template_tree.nearest_one::<SquaredEuclidean>(&[q.x, q.y, q.z]);
                    sum += nn.distance;
                    (*p, template[nn.item as usize])
                })
                .collect();
            mean_sq = sum / pairs.len() as f64;
            let Ok(next) = solve_point_registration_3d3d(&pairs) else {
                break;
            };
            let moved = next.rotation.angle_to(&pose.rotation) + (next.translation - pose.translation).norm();
            *pose = next;
            if moved < 1e-7 {
                break;
            }
        }
        mean_sq
    };
    let coarse = icp_iterations.min(ICP_COARSE_ITERATIONS);
    let mut hypotheses: Vec<(f64, Pose)> = starts
        .into_iter()
        .map(|r0| {
            let mut pose = Pose::new(Rotation::from_matrix_unchecked(r0), -(r0 * mean));
            (icp(&mut pose, coarse), pose)
        })
        .collect();
    hypotheses.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = (f64::INFINITY, Pose::identity());
    for (_, mut pose) in hypotheses.into_iter().take(ICP_KEPT_HYPOTHESES) {
        icp(&mut pose, icp_iterations - coarse);
        let aligned: Vec<Vector3<f64>> = cluster.iter().map(|p| pose.transform_point(p)).collect();
        let aligned_tree = build_tree(&aligned);
        let err = symmetric_rms(&aligned, &aligned_tree, template, template_tree);
        if err < best.0 {
            best = (err, pose);
        }
    }
    best
}

/// Registration error of every cluster against the board template.
pub fn cluster_registration_errors(clusters: &[Vec<Vector3<f64>>], spec: &BoardSpec, config: &LidarConfig) -> Vec<f64> {
    use rayon::prelude::*;
    let template = spec.template(config.template_pitch);
    let tree = build_tree(&template);
    clusters
        .par_iter()
        .map(|c| {
            if c.len() < 3 {
                f64::INFINITY
            } else {
                register_to_template(c, &template, &tree, config.icp_iterations).0
            }
        })
        .collect()
}

/// Picks the cluster that best matches the board template.
pub fn verify_clusters(clusters: &[Vec<Vector3<f64>>], spec: &BoardSpec, config: &LidarConfig) -> Result<(usize, f64)> {
    if clusters.is_empty() {
        return Err(Error::NoBoardFound {
            best_error: f64::INFINITY,
        });
    }
    let errors = cluster_registration_errors(clusters, spec, config);
    let (idx, err) = errors
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .expect("non-empty");
    if !(err <= config.reject_threshold) {
        return Err(Error::NoBoardFound { best_error: err });
    }
    Ok((idx, err))
}

// ---------------------------------------------------------------------------
// Extraction
// ---------------------------------------------------------------------------

fn plane_from_points(points: &[Vector3<f64>]) -> Option<(Vector3<f64>, f64)> {
    if points.len() < 3 {
        return None;
    }
    let (mean, sigmas, axes) = pca(points);
    if sigmas[1] <= 1e-18 * sigmas[0].max(1.0) {
        return None;
    }
    let mut n: Vector3<f64> = axes.column(2).into_owned();
    let mut d = -n.dot(&mean);
    if d < 0.0 {
        n = -n;
        d = -d;
    }
    Some((n, d))
}

/// RANSAC plane fit with a least-squares refit on the consensus set.
pub fn fit_plane_ransac(points: &[Vector3<f64>], inlier_threshold: f64, max_iters: usize, seed: u64) -> Result<PlaneFeature> {
    if points.len() < 3 {
        return Err(Error::DegenerateInput("plane fit needs at least 3 points".into()));
    }
    let (_, sigmas, _) = pca(points);
    if sigmas[1] <= 1e-18 * sigmas[0].max(1.0) {
        return Err(Error::DegenerateInput("points are collinear".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = |n: &Vector3<f64>, d: f64| points.iter().filter(|p| (n.dot(p) + d).abs() <= inlier_threshold).count();
    let mut best: Option<(usize, Vector3<f64>, f64)> = None;
    for _ in 0..max_iters.max(1) {
        let i = rng.random_range(0..points.len());
        let j = rng.random_range(0..points.len());
        let k = rng.random_range(0..points.len());
        let cross = (points[j] - points[i]).cross(&(points[k] - points[i]));
        let norm = cross.norm();
        if norm < 1e-12 {
            continue;
        }
        let n = cross / norm;
        let d = -n.dot(&points[i]);
        let c = count(&n, d);
        if best.as_ref().is_none_or(|b| c > b.0) {
            best = Some((c, n, d));
        }
    }
    let (_, mut n, mut d) = best
        .or_else(|| plane_from_points(points).map(|(n, d)| (0, n, d)))
        .ok_or_else(|| Error::DegenerateInput("no valid plane hypothesis".into()))?;
    let mut inliers: Vec<usize> = Vec::new();
    for _ in 0..3 {
        inliers = (0..points.len())
            .filter(|&i| (n.dot(&points[i]) + d).abs() <= inlier_threshold)
            .collect();
        let pts: Vec<Vector3<f64>> = inliers.iter().map(|&i| points[i]).collect();
        match plane_from_points(&pts) {
            Some((n2, d2)) => {
                n = n2;
                d = d2;
            }
            None => break,
        }
    }
    if d < 0.0 {
        n = -n;
        d = -d;
    }
    let rms_distance = (inliers
        .iter()
        .map(|&i| (n.dot(&points[i]) + d).powi(2))
        .sum::<f64>()
        / inliers.len().max(1) as f64)
        .sqrt();
    Ok(PlaneFeature {
        normal: n,
        offset: d,
        inlier_indices: inliers,
        rms_distance,
    })
}

/// Refines a plane by Gauss-Newton on the range residuals
/// `(n·p + d) / (n·û)`, with `û` the unit ray from the sensor to `p`.
///
/// When the noise is along the rays this is the maximum-likelihood plane;
/// the orthogonal least-squares fit is biased toward grazing incidence.
pub fn refit_plane_along_rays(points: &[Vector3<f64>], plane: &PlaneFeature) -> PlaneFeature {
    let rays: Vec<Vector3<f64>> = points.iter().map(|p| p.normalize()).collect();
    let mut n = plane.normal;
    let mut d = plane.offset;
    let cost = |n: &Vector3<f64>, d: f64| {
        points
            .iter()
            .zip(&rays)
            .map(|(p, u)| ((n.dot(p) + d) / n.dot(u).abs().max(0.1)).powi(2))
            .sum::<f64>()
    };
    let mut current = cost(&n, d);
    for _ in 0..20 {
        let e1 = crate::geom::any_orthogonal(&n);
        let e2 = n.cross(&e1);
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (p, u) in points.iter().zip(&rays) {
            let c = n.dot(u);
            if c.abs() < 0.1 {
                continue;
            }
            let a = n.dot(p) + d;
            let r = a / c;
            let j = Vector3::new(
                (e1.dot(p) * c - a * e1.dot(u)) / (c * c),
                (e2.dot(p) * c - a * e2.dot(u)) / (c * c),
                1.0 / c,
            );
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let Some(step) = jtj.cholesky().map(|ch| ch.solve(&(-jtr))) else {
            break;
        };
        let n_new = (n + e1 * step[0] + e2 * step[1]).normalize();
        let d_new = d + step[2];
        let c_new = cost(&n_new, d_new);
        if !(c_new < current) {
            break;
        }
        let converged = current - c_new <= 1e-12 * current.max(1e-300);
        n = n_new;
        d = d_new;
        current = c_new;
        if converged {
            break;
        }
    }
    if d < 0.0 {
        n = -n;
        d = -d;
    }
    let rms_distance = (points.iter().map(|p| (n.dot(p) + d).powi(2)).sum::<f64>() / points.len().max(1) as f64).sqrt();
    PlaneFeature {
        normal: n,
        offset: d,
        inlier_indices: plane.inlier_indices.clone(),
        rms_distance,
    }
}

/// `p − (n·(p − g))·n` with `g` on the plane.
pub fn project_to_plane(p: &Vector3<f64>, plane: &PlaneFeature) -> Vector3<f64> {
    let a = plane.normal.dot(&(p - plane.anchor()));
    p - a * plane.normal
}

/// Where the sensor ray through `p` meets the plane. Range noise moves a
/// point along its ray, so this undoes it exactly, while the orthogonal
/// projection leaves an in-plane shift that grows with incidence. Falls
/// back to [`project_to_plane`] for rays within ~6° of grazing.
pub fn intersect_ray_with_plane(p: &Vector3<f64>, plane: &PlaneFeature) -> Vector3<f64> {
    let Some(u) = p.try_normalize(1e-12) else {
        return project_to_plane(p, plane);
    };
    let c = plane.normal.dot(&u);
    if c.abs() < 0.1 {
        return project_to_plane(p, plane);
    }
    u * (-plane.offset / c)
}

/// First and last point of every ring (one point for single-point rings).
pub fn extract_edge_points(board_rings: &[Vec<Vector3<f64>>]) -> Vec<Vector3<f64>> {
    let mut out = Vec::new();
    for ring in board_rings {
        match ring.len() {
            0 => {}
            1 => out.push(ring[0]),
            n => {
                out.push(ring[0]);
                out.push(ring[n - 1]);
            }
        }
    }
    out
}

/// Ring ends pushed outward by half the spacing to their inner neighbour.
///
/// The last return on a board lies up to one azimuth step inside the
/// true edge, so the raw end points are biased inward; the half step
/// makes the error zero-mean. Single-point rings are kept as they are.
pub fn extract_centered_edge_points(board_rings: &[Vec<Vector3<f64>>]) -> Vec<Vector3<f64>> {
    let mut out = Vec::new();
    for ring in board_rings {
        match ring.len() {
            0 => {}
            1 => out.push(ring[0]),
            n => {
                out.push(ring[0] + 0.5 * (ring[0] - ring[1]));
                out.push(ring[n - 1] + 0.5 * (ring[n - 1] - ring[n - 2]));
            }
        }
    }
    out
}

/// Keeps the points inside the previous board box inflated by `margin`.
pub fn track_board(prev: &LidarBoardFeatures, cloud: &RingCloud, margin: f64) -> RingCloud {
    let bbox = prev.bounding_box.inflate(margin);
    RingCloud {
        points: cloud
            .points
            .iter()
            .filter(|p| bbox.contains(&p.xyz))
            .copied()
            .collect(),
        ring_count: cloud.ring_count,
    }
}

/// Indices of the cluster-search candidates (points of kept segments).
fn candidate_points(cloud: &RingCloud, rings: &[Vec<usize>], config: &LidarConfig) -> Vec<usize> {
    let mut keep = Vec::new();
    for ring in rings {
        let segments = segment_ring(cloud, ring, config.gap_threshold);
        for s in filter_segments(segments, config.linearity_min, config.max_segment_length, config.range_noise_sigma) {
            keep.extend(s.indices);
        }
    }
    keep
}

/// Runs selection and extraction on one frame.
pub fn extract_lidar_features(
    cloud: &RingCloud,
    spec: &BoardSpec,
    state: &mut TrackingState,
    config: &LidarConfig,
) -> Result<LidarBoardFeatures> {
    if let Some(prev) = state.previous.take() {
        let cropped = track_board(&prev, cloud, config.tracking_margin);
        if cropped.len() >= config.min_cluster_size {
            if let Ok(f) = extract_tracked(&cropped, spec, config) {
                state.previous = Some(f.clone());
                return Ok(f);
            }
        }
        log::debug!("tracking lost, running full board selection");
    }
    let f = extract_full(cloud, spec, config)?;
    state.previous = Some(f.clone());
    Ok(f)
}

fn extract_full(cloud: &RingCloud, spec: &BoardSpec, config: &LidarConfig) -> Result<LidarBoardFeatures> {
    let rings = split_rings(cloud)?;
    let candidates = candidate_points(cloud, &rings, config);
    let pts: Vec<Vector3<f64>> = candidates.iter().map(|&i| cloud.points[i].xyz).collect();
    let clusters = cluster_dbscan(&pts, config.dbscan_eps, config.dbscan_min_pts, config.min_cluster_size);
    let cluster_pts: Vec<Vec<Vector3<f64>>> = clusters
        .iter()
        .map(|c| c.iter().map(|&i| pts[i]).collect())
        .collect();
    let (best, err) = verify_clusters(&cluster_pts, spec, config)?;
    let members: Vec<usize> = clusters[best].iter().map(|&i| candidates[i]).collect();
    board_features(cloud, &rings, &members, err, config)
}

fn extract_tracked(cloud: &RingCloud, spec: &BoardSpec, config: &LidarConfig) -> Result<LidarBoardFeatures> {
    let rings = split_rings(cloud)?;
    let all: Vec<Vector3<f64>> = cloud.points.iter().map(|p| p.xyz).collect();
    let plane = fit_plane_ransac(&all, config.ransac_threshold, config.ransac_iterations, config.seed)?;
    let members = plane.inlier_indices.clone();
    let member_pts: Vec<Vector3<f64>> = members.iter().map(|&i| all[i]).collect();
    let (_, err) = verify_clusters(&[member_pts], spec, config)?;
    board_features(cloud, &rings, &members, err, config)
}

/// Plane fit, projection and edge extraction on the selected board points.
fn board_features(
    cloud: &RingCloud,
    rings: &[Vec<usize>],
    members: &[usize],
    registration_error: f64,
    config: &LidarConfig,
) -> Result<LidarBoardFeatures> {
    let pts: Vec<Vector3<f64>> = members.iter().map(|&i| cloud.points[i].xyz).collect();
    let mut plane = fit_plane_ransac(&pts, config.ransac_threshold, config.ransac_iterations, config.seed)?;
    if config.ray_refit {
        let inliers: Vec<Vector3<f64>> = plane.inlier_indices.iter().map(|&k| pts[k]).collect();
        plane = refit_plane_along_rays(&inliers, &plane);
    }
    let mut is_inlier = vec![false; cloud.len()];
    for &k in &plane.inlier_indices {
        is_inlier[members[k]] = true;
    }
    let place = |p: &Vector3<f64>| {
        if config.project_points {
            project_to_plane(p, &plane)
        } else {
            *p
        }
    };
    let place_edge = |p: &Vector3<f64>| {
        if config.project_points && config.edges_along_rays {
            intersect_ray_with_plane(p, &plane)
        } else {
            place(p)
        }
    };
    let planar_points: Vec<Vector3<f64>> = plane.inlier_indices.iter().map(|&k| place(&pts[k])).collect();
    let board_rings: Vec<Vec<Vector3<f64>>> = rings
        .iter()
        .map(|ring| {
            ring.iter()
                .filter(|&&i| is_inlier[i])
                .map(|&i| place_edge(&cloud.points[i].xyz))
                .collect()
        })
        .collect();
    let edge_points = if config.centered_edges {
        extract_centered_edge_points(&board_rings)
    } else {
        extract_edge_points(&board_rings)
    };
    let raw: Vec<Vector3<f64>> = plane.inlier_indices.iter().map(|&k| pts[k]).collect();
    let bounding_box = Aabb::from_points(raw.iter())
        .ok_or(Error::NoBoardFound { best_error: registration_error })?;
    let plane = PlaneFeature {
        inlier_indices: plane.inlier_indices.iter().map(|&k| members[k]).collect(),
        ..plane
    };
    Ok(LidarBoardFeatures {
        plane,
        planar_points,
        edge_points,
        bounding_box,
        registration_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, Normal};

    fn cloud_from(points: &[Vector3<f64>], ring: Option<u16>) -> RingCloud {
        RingCloud {
            points: points.iter().map(|p| LidarPoint::new(*p, ring)).collect(),
            ring_count: 1,
        }
    }

    fn board() -> BoardSpec {
        BoardSpec {
            width: 0.8,
            height: 0.6,
            inner_rows: 5,
            inner_cols: 7,
            square_size: 0.1,
        }
    }

    #[test]
    fn pitch_of_45_degrees() {
        let p = LidarPoint::new(Vector3::new(1.0, 0.0, 1.0), None);
        assert_relative_eq!(p.pitch().to_degrees(), 45.0, epsilon = 1e-12);
    }

    #[test]
    fn split_rings_by_pitch_recovers_vlp16_rings() {
        let mut points = Vec::new();
        let mut truth = Vec::new();
        for ring in 0..16u16 {
            let elev = (-15.0 + 2.0 * ring as f64).to_radians();
            for k in 0..90 {
                let az = (k as f64 * 4.0).to_radians();
                let range = 3.0 + 0.5 * (k as f64 * 0.37).sin();
                points.push(Vector3::new(
                    range * elev.cos() * az.cos(),
                    range * elev.cos() * az.sin(),
                    range * elev.sin(),
                ));
                truth.push(ring as usize);
            }
        }
        let mut cloud = cloud_from(&points, None);
        cloud.ring_count = 16;
        let rings = split_rings(&cloud).unwrap();
        assert_eq!(rings.len(), 16);
        for (r, members) in rings.iter().enumerate() {
            assert_eq!(members.len(), 90);
            assert!(members.iter().all(|&i| truth[i] == r));
        }
    }

    #[test]
    fn split_rings_uses_ring_field() {
        let mut cloud = cloud_from(&[Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 5.0)], None);
        cloud.points[0].ring = Some(3);
        cloud.points[1].ring = Some(1);
        cloud.ring_count = 4;
        let rings = split_rings(&cloud).unwrap();
        assert_eq!(rings, vec![vec![], vec![1], vec![], vec![0]]);
    }

    #[test]
    fn split_rings_reports_empty_bin() {
        let mut cloud = cloud_from(&[Vector3::new(1.0, 0.0, 0.0), Vector3::new(1.0, 0.1, 0.0)], None);
        cloud.ring_count = 3;
        assert!(matches!(split_rings(&cloud), Err(Error::RingAmbiguity(_))));
    }

    #[test]
    fn segmentation_examples() {
        let line: Vec<Vector3<f64>> = (0..20).map(|i| Vector3::new(2.0, -0.5 + 0.05 * i as f64, 0.0)).collect();
        let cloud = cloud_from(&line, Some(0));
        let ring: Vec<usize> = (0..20).collect();
        let segs = segment_ring(&cloud, &ring, 0.1);
        assert_eq!(segs.len(), 1);
        assert!(segs[0].pca_sigmas[1] / segs[0].pca_sigmas[0] <= 1e-9);

        let mut gapped = line.clone();
        for p in gapped.iter_mut().skip(10) {
            p.y += 0.5;
        }
        let cloud = cloud_from(&gapped, Some(0));
        assert_eq!(segment_ring(&cloud, &ring, 0.1).len(), 2);

        let mut l_shape: Vec<Vector3<f64>> = (0..10).map(|i| Vector3::new(2.0, 0.05 * i as f64, 0.0)).collect();
        l_shape.extend((1..10).map(|i| Vector3::new(2.0 - 0.05 * i as f64, 0.45, 0.0)));
        let cloud = cloud_from(&l_shape, Some(0));
        let ring: Vec<usize> = (0..l_shape.len()).collect();
        let segs = segment_ring(&cloud, &ring, 0.1);
        assert_eq!(segs.len(), 1);
        assert!(segs[0].linearity(0.0) < 0.9);
        assert!(filter_segments(segs, 0.9, 1.0, 0.0).is_empty());
    }

    #[test]
    fn segment_filter_length_cap() {
        let make = |len: f64| {
            let pts: Vec<Vector3<f64>> = (0..=30).map(|i| Vector3::new(3.0, len * i as f64 / 30.0, 0.0)).collect();
            let cloud = cloud_from(&pts, Some(0));
            let ring: Vec<usize> = (0..pts.len()).collect();
            segment_ring(&cloud, &ring, 0.1)
        };
        let defaults = LidarConfig::default();
        assert_eq!(defaults.linearity_min, 0.9);
        assert_eq!(defaults.max_segment_length, 1.0);
        assert_eq!(filter_segments(make(0.6), 0.9, 1.0, 0.0).len(), 1);
        assert!(filter_segments(make(1.4), 0.9, 1.0, 0.0).is_empty());
    }

    fn blob(center: Vector3<f64>, n: usize, spread: f64, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Normal::new(0.0, spread).unwrap();
        (0..n)
            .map(|_| center + Vector3::new(g.sample(&mut rng), g.sample(&mut rng), g.sample(&mut rng)))
            .collect()
    }

    #[test]
    fn dbscan_examples() {
        let mut pts = blob(Vector3::zeros(), 60, 0.05, 1);
        pts.extend(blob(Vector3::new(5.0, 0.0, 0.0), 60, 0.05, 2));
        let clusters = cluster_dbscan(&pts, 0.3, 5, 30);
        assert_eq!(clusters.len(), 2);
        assert!(clusters[0].iter().all(|&i| i < 60));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sparse: Vec<Vector3<f64>> = (0..50)
            .map(|_| Vector3::new(rng.random_range(0.0..20.0), rng.random_range(0.0..20.0), rng.random_range(0.0..20.0)))
            .collect();
        assert!(cluster_dbscan(&sparse, 0.3, 5, 1).is_empty());
    }

    fn board_cluster(spec: &BoardSpec, pose: &Pose, step: f64) -> Vec<Vector3<f64>> {
        let mut out = Vec::new();
        let nx = (spec.width / step) as usize;
        let ny = (spec.height / step) as usize;
        for i in 0..=nx {
            for j in 0..=ny {
                let p = Vector3::new(-spec.width / 2.0 + i as f64 * step, -spec.height / 2.0 + j as f64 * step, 0.0);
                out.push(pose.transform_point(&p));
            }
        }
        out
    }

    #[test]
    fn verification_prefers_board_over_wall() {
        let spec = board();
        let config = LidarConfig::default();
        let pose = Pose::new(crate::geom::exp_so3(&Vector3::new(0.3, 1.2, -0.2)), Vector3::new(3.0, 0.5, 0.2));
        let b = board_cluster(&spec, &pose, 0.02);
        let (idx, err) = verify_clusters(std::slice::from_ref(&b), &spec, &config).unwrap();
        assert_eq!(idx, 0);
        assert!(err <= 0.01, "err {err}");

        let wall_spec = BoardSpec {
            width: 2.0,
            height: 1.5,
            ..spec
        };
        let wall = board_cluster(&wall_spec, &Pose::new(Rotation::identity(), Vector3::new(0.0, 0.0, 6.0)), 0.03);
        let (idx, _) = verify_clusters(&[wall.clone(), b], &spec, &config).unwrap();
        assert_eq!(idx, 1);
        assert!(matches!(verify_clusters(&[wall], &spec, &config), Err(Error::NoBoardFound { .. })));
    }

    #[test]
    fn ransac_plane_examples() {
        let plane_pts: Vec<Vector3<f64>> = (0..100)
            .map(|i| Vector3::new((i % 10) as f64 * 0.1, (i / 10) as f64 * 0.1, 2.0))
            .collect();
        let plane = fit_plane_ransac(&plane_pts, 0.02, 100, 0).unwrap();
        assert_relative_eq!(plane.normal, Vector3::new(0.0, 0.0, -1.0), epsilon = 1e-10);
        assert_relative_eq!(plane.offset, 2.0, epsilon = 1e-10);

        let mut with_outliers = plane_pts.clone();
        for i in 0..10 {
            with_outliers.push(Vector3::new(i as f64 * 0.1, 0.3, 3.0));
        }
        let plane = fit_plane_ransac(&with_outliers, 0.02, 200, 1).unwrap();
        assert!(plane.inlier_indices.iter().all(|&i| i < 100));
        assert_eq!(plane.inlier_indices.len(), 100);

        let line: Vec<Vector3<f64>> = (0..10).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(fit_plane_ransac(&line, 0.02, 10, 0), Err(Error::DegenerateInput(_))));
        assert!(matches!(fit_plane_ransac(&line[..2], 0.02, 10, 0), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn ransac_normal_under_noise() {
        // 1 m board at 3 m with 1 cm noise along the normal.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = Normal::new(0.0, 0.01).unwrap();
        let n_true = Vector3::new(-1.0, 0.2, 0.1).normalize();
        let u = crate::geom::any_orthogonal(&n_true);
        let v = n_true.cross(&u);
        let center = -n_true * 3.0;
        let pts: Vec<Vector3<f64>> = (0..600)
            .map(|_| center + u * rng.random_range(-0.5..0.5) + v * rng.random_range(-0.5..0.5) + n_true * g.sample(&mut rng))
            .collect();
        let plane = fit_plane_ransac(&pts, 0.03, 200, 3).unwrap();
        let angle = plane.normal.dot(&n_true).abs().min(1.0).acos().to_degrees();
        assert!(angle < 1.0, "angle {angle}");
        assert!(plane.offset > 0.0);
    }

    #[test]
    fn projection_examples() {
        let plane = PlaneFeature {
            normal: Vector3::z(),
            offset: 0.0,
            inlier_indices: vec![],
            rms_distance: 0.0,
        };
        assert_eq!(project_to_plane(&Vector3::new(1.0, 1.0, 1.0), &plane), Vector3::new(1.0, 1.0, 0.0));
        let on = Vector3::new(0.3, -2.0, 0.0);
        assert_eq!(project_to_plane(&on, &plane), on);

        let tilted = PlaneFeature {
            normal: Vector3::new(0.3, -0.4, 0.5).normalize(),
            offset: 1.7,
            ..plane
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let q = project_to_plane(&p, &tilted);
            assert!(tilted.signed_distance(&q).abs() <= 1e-12);
            assert!(((p - q).norm() - tilted.signed_distance(&p).abs()).abs() <= 1e-12);
        }
    }

    #[test]
    fn edge_points_two_per_ring() {
        let rings: Vec<Vec<Vector3<f64>>> = (0..8)
            .map(|r| (0..5).map(|k| Vector3::new(3.0, k as f64 * 0.1, r as f64 * 0.1)).collect())
            .collect();
        assert_eq!(extract_edge_points(&rings).len(), 16);
        let single = vec![vec![Vector3::new(1.0, 2.0, 3.0)]];
        assert_eq!(extract_edge_points(&single), vec![Vector3::new(1.0, 2.0, 3.0)]);
    }

    #[test]
    fn tracking_crop_excludes_distant_wall() {
        let prev = LidarBoardFeatures {
            plane: PlaneFeature {
                normal: -Vector3::x(),
                offset: 3.0,
                inlier_indices: vec![],
                rms_distance: 0.0,
            },
            planar_points: vec![],
            edge_points: vec![],
            bounding_box: Aabb {
                min: Vector3::new(2.95, -0.4, -0.3),
                max: Vector3::new(3.05, 0.4, 0.3),
            },
            registration_error: 0.0,
        };
        let pts = vec![Vector3::new(3.0, 0.05, 0.0), Vector3::new(5.0, 0.0, 0.0), Vector3::new(3.0, 0.7, 0.0)];
        let cropped = track_board(&prev, &cloud_from(&pts, Some(0)), 0.3);
        assert_eq!(cropped.points.len(), 2);
        assert!(cropped.points.iter().all(|p| p.xyz.x < 4.0));
    }
}
