//! Calibration quality metrics.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::calib::FrameFeatures;
use crate::error::Result;
use crate::geom::Pose;
use crate::qpep::solve_point_registration_3d3d;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub egt_rot_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub egt_trans_m: Option<f64>,
    pub mpe: f64,
    pub mee: f64,
    pub mge: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normal_angle_errors: Option<Vec<f64>>,
}

impl MetricReport {
    /// Geometric errors of `pose` on `frames`, plus EGT when `gt` is known.
    pub fn evaluate(pose: &Pose, frames: &[FrameFeatures], gt: Option<&Pose>) -> Self {
        let (mge, mpe, mee) = mge(pose, frames);
        let egt = gt.map(|g| egt(g, pose));
        Self {
            egt_rot_deg: egt.map(|e| e.0),
            egt_trans_m: egt.map(|e| e.1),
            mpe,
            mee,
            mge,
            normal_angle_errors: None,
        }
    }

    pub fn mean_normal_error(&self) -> Option<f64> {
        self.normal_angle_errors
            .as_ref()
            .filter(|v| !v.is_empty())
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Rotation error (deg) and translation error (m) of `est` against `gt`.
pub fn egt(gt: &Pose, est: &Pose) -> (f64, f64) {
    (
        gt.rotation.angle_to(&est.rotation).to_degrees(),
        (gt.translation - est.translation).norm(),
    )
}

/// Sums and counts of plane and edge distances for one frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FrameError {
    pub planar_sum: f64,
    pub planar_count: usize,
    pub edge_sum: f64,
    pub edge_count: usize,
}

impl FrameError {
    pub fn mpe(&self) -> f64 {
        mean(self.planar_sum, self.planar_count)
    }

    pub fn mee(&self) -> f64 {
        mean(self.edge_sum, self.edge_count)
    }

    pub fn mge(&self) -> f64 {
        self.mpe() + self.mee()
    }
}

fn mean(sum: f64, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

pub fn frame_error(pose: &Pose, frame: &FrameFeatures) -> FrameError {
    let cam = &frame.camera;
    let planar_sum = frame
        .lidar
        .planar_points
        .iter()
        .map(|p| cam.signed_distance(&pose.transform_point(p)).abs())
        .sum();
    let edge_sum = frame
        .lidar
        .edge_points
        .iter()
        .map(|p| cam.outline_distance(&pose.transform_point(p)))
        .sum();
    FrameError {
        planar_sum,
        planar_count: frame.lidar.planar_points.len(),
        edge_sum,
        edge_count: frame.lidar.edge_points.len(),
    }
}

/// `(MGE, MPE, MEE)` pooled over the points of all frames.
pub fn mge(pose: &Pose, frames: &[FrameFeatures]) -> (f64, f64, f64) {
    let total = frames.iter().map(|f| frame_error(pose, f)).fold(FrameError::default(), |a, b| FrameError {
        planar_sum: a.planar_sum + b.planar_sum,
        planar_count: a.planar_count + b.planar_count,
        edge_sum: a.edge_sum + b.edge_sum,
        edge_count: a.edge_count + b.edge_count,
    });
    (total.mge(), total.mpe(), total.mee())
}

/// Angle between two plane normals, ignoring their sign (deg).
pub fn normal_angle_error(n_est: &Vector3<f64>, n_gt: &Vector3<f64>) -> f64 {
    let c = (n_est.dot(n_gt) / (n_est.norm() * n_gt.norm())).abs().min(1.0);
    c.acos().to_degrees()
}

/// Reference extrinsics from hand-verified `(lidar, camera)` point pairs.
pub fn fake_gt(point_pairs: &[(Vector3<f64>, Vector3<f64>)]) -> Result<Pose> {
    solve_point_registration_3d3d(point_pairs)
}
