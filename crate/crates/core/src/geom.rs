//! Rotation and rigid-pose algebra on SO(3) / SE(3).
//!
//! Rotations are perturbed on the right: a noisy rotation is modelled as
//! `R̄·exp(δφ^)` with `δφ ~ N(0, Σ)`. Every covariance in this crate is
//! expressed in that tangent frame.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Rotation vector `φ` (axis times angle, radians).
pub type AxisAngle = Vector3<f64>;

const SMALL_ANGLE: f64 = 1e-8;

/// `φ^`, the skew-symmetric matrix with `skew(φ)·v = φ × v`.
pub fn skew(phi: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -phi.z, phi.y, //
        phi.z, 0.0, -phi.x, //
        -phi.y, phi.x, 0.0,
    )
}

/// Inverse of [`skew`]; reads the antisymmetric part of `m`.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// An element of SO(3), stored as an orthonormal matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Builds a rotation from a quaternion in `(w, x, y, z)` order. The
    /// quaternion is normalized first.
    pub fn from_quaternion_wxyz(q: [f64; 4]) -> Self {
        let uq = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
        Rotation(uq.to_rotation_matrix().into_inner())
    }

    /// Unit quaternion `(w, x, y, z)` with the sign fixed so that `w ≥ 0`.
    pub fn to_quaternion_wxyz(&self) -> [f64; 4] {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let q = q.quaternion();
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.w, s * q.i, s * q.j, s * q.k]
    }

    /// Projects an arbitrary matrix onto the closest rotation (via the
    /// polar decomposition).
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd u");
        let v_t = svd.v_t.expect("svd v_t");
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Rotation(u * d * v_t)
    }

    /// Wraps a matrix that is already known to be a rotation.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// `R = Rz(yaw)·Ry(pitch)·Rx(roll)` (intrinsic Z-Y-X), angles in radians.
    pub fn from_euler_zyx(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self::exp(&(Vector3::z() * yaw))
            * Self::exp(&(Vector3::y() * pitch))
            * Self::exp(&(Vector3::x() * roll))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Exponential map with a second-order Taylor expansion near zero.
    pub fn exp(phi: &AxisAngle) -> Self {
        let theta2 = phi.norm_squared();
        let k = skew(phi);
        if theta2.sqrt() < SMALL_ANGLE {
            return Rotation(Matrix3::identity() + k + 0.5 * k * k);
        }
        let theta = theta2.sqrt();
        let a = theta.sin() / theta;
        let b = (1.0 - theta.cos()) / theta2;
        Rotation(Matrix3::identity() + a * k + b * k * k)
    }

    /// Logarithm map, `‖φ‖ ∈ [0, π]`.
    pub fn log(&self) -> AxisAngle {
        self.log_flagged().0
    }

    /// Logarithm map that also reports whether the angle lies within 1e-9
    /// of π, where the sign of the axis is arbitrary.
    pub fn log_flagged(&self) -> (AxisAngle, bool) {
        let r = &self.0;
        let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let axis_sin = vee(r);
        let sin_theta = axis_sin.norm();
        let theta = sin_theta.atan2(cos_theta);

        if theta < SMALL_ANGLE {
            return (axis_sin, false);
        }
        if cos_theta > -0.99 {
            return (axis_sin * (theta / sin_theta), false);
        }

        // Near π the antisymmetric part vanishes; read the axis from the
        // symmetric part instead: (R + Rᵀ)/2 = cosθ·I + (1 − cosθ)·aaᵀ.
        let sym = (r + r.transpose()) * 0.5;
        let aat = (sym - Matrix3::identity() * cos_theta) / (1.0 - cos_theta);
        let col = (0..3)
            .max_by(|&i, &j| aat[(i, i)].total_cmp(&aat[(j, j)]))
            .unwrap_or(0);
        let mut axis: Vector3<f64> = aat.column(col).into_owned();
        axis /= axis.norm();
        if axis.dot(&axis_sin) < 0.0 {
            axis = -axis;
        }
        let near_pi = (PI - theta) < 1e-9;
        (axis * theta, near_pi)
    }

    /// `R·exp(δφ^)`.
    pub fn perturb_right(&self, dphi: &AxisAngle) -> Self {
        *self * Self::exp(dphi)
    }

    /// Rotation angle of `selfᵀ·other`, radians.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        (self.transpose() * *other).angle()
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let c = ((self.0.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        vee(&self.0).norm().atan2(c)
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl std::ops::Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

/// Free-function form of [`Rotation::exp`].
pub fn exp_so3(phi: &AxisAngle) -> Rotation {
    Rotation::exp(phi)
}

/// Free-function form of [`Rotation::log`].
pub fn log_so3(r: &Rotation) -> AxisAngle {
    r.log()
}

/// Free-function form of [`Rotation::perturb_right`].
pub fn perturb_right(r: &Rotation, dphi: &AxisAngle) -> Rotation {
    r.perturb_right(dphi)
}

/// Rigid transform `x ↦ R·x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "PoseJson", into = "PoseJson")]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * *p + self.translation
    }

    /// Applies a right perturbation `(δφ, δt)`: `R·exp(δφ^)`, `t + δt`.
    pub fn perturb(&self, dphi: &AxisAngle, dt: &Vector3<f64>) -> Pose {
        Pose {
            rotation: self.rotation.perturb_right(dphi),
            translation: self.translation + dt,
        }
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn inverse(a: &Pose) -> Pose {
    a.inverse()
}

pub fn transform_point(a: &Pose, p: &Vector3<f64>) -> Vector3<f64> {
    a.transform_point(p)
}

/// On-disk pose form: `{"quaternion": [w, x, y, z], "translation": [x, y, z]}`.
#[derive(Serialize, Deserialize)]
struct PoseJson {
    quaternion: [f64; 4],
    translation: [f64; 3],
}

impl From<PoseJson> for Pose {
    fn from(p: PoseJson) -> Self {
        Pose {
            rotation: Rotation::from_quaternion_wxyz(p.quaternion),
            translation: Vector3::from(p.translation),
        }
    }
}

impl From<Pose> for PoseJson {
    fn from(p: Pose) -> Self {
        PoseJson {
            quaternion: p.rotation.to_quaternion_wxyz(),
            translation: p.translation.into(),
        }
    }
}

/// Arbitrary unit vector orthogonal to `n`.
pub(crate) fn any_orthogonal(n: &Vector3<f64>) -> Vector3<f64> {
    let a = if n.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    n.cross(&a).normalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cross_componentwise(a: &Vector3<f64>, b: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        )
    }

    #[test]
    fn skew_examples() {
        let k = skew(&Vector3::new(1.0, 0.0, 0.0));
        let expected = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert_eq!(k, expected);
        assert_eq!(skew(&Vector3::zeros()), Matrix3::zeros());
    }

    #[test]
    fn exp_quarter_turn_about_z() {
        let r = exp_so3(&Vector3::new(0.0, 0.0, PI / 2.0));
        let v = r * Vector3::x();
        assert_relative_eq!(v, Vector3::y(), epsilon = 1e-12);
        assert_eq!(exp_so3(&Vector3::zeros()), Rotation::identity());
    }

    #[test]
    fn log_examples() {
        assert_eq!(log_so3(&Rotation::identity()), Vector3::zeros());
        let phi = Vector3::new(0.3, -0.2, 0.1);
        assert_relative_eq!(log_so3(&exp_so3(&phi)), phi, epsilon = 1e-10);

        let angle = PI - 1e-3;
        let c = angle.cos();
        let s = angle.sin();
        let r = Rotation::from_matrix_unchecked(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0));
        assert!((log_so3(&r).norm() - angle).abs() < 1e-6);
    }

    #[test]
    fn log_at_exactly_pi_is_flagged() {
        let r = Rotation::from_matrix_unchecked(Matrix3::from_diagonal(&Vector3::new(
            -1.0, -1.0, 1.0,
        )));
        let (phi, near_pi) = r.log_flagged();
        assert!(near_pi);
        assert_relative_eq!(phi.norm(), PI, epsilon = 1e-12);
        assert_relative_eq!(phi.z.abs(), PI, epsilon = 1e-12);
        assert_relative_eq!(exp_so3(&phi).matrix(), r.matrix(), epsilon = 1e-12);
    }

    #[test]
    fn perturb_right_examples() {
        let r = exp_so3(&Vector3::new(0.4, 0.1, -1.2));
        assert_eq!(perturb_right(&r, &Vector3::zeros()), r);
        let phi = Vector3::new(0.2, 0.5, -0.3);
        assert_eq!(perturb_right(&Rotation::identity(), &phi), exp_so3(&phi));

        let d = Vector3::new(1.0, -2.0, 0.5).normalize() * 1e-4;
        let first_order = r.matrix() * (Matrix3::identity() + skew(&d));
        let diff = perturb_right(&r, &d).matrix() - first_order;
        assert!(diff.norm() <= 1e-8);
    }

    #[test]
    fn quaternion_order_and_sign() {
        let r = exp_so3(&Vector3::new(0.0, 0.0, PI / 2.0));
        let q = r.to_quaternion_wxyz();
        let h = (0.5f64).sqrt();
        assert_relative_eq!(q[0], h, epsilon = 1e-12);
        assert_relative_eq!(q[3], h, epsilon = 1e-12);
        let back = Rotation::from_quaternion_wxyz([-q[0], -q[1], -q[2], -q[3]]);
        assert_relative_eq!(back.matrix(), r.matrix(), epsilon = 1e-12);
    }

    #[test]
    fn pose_json_layout() {
        let pose = Pose::new(Rotation::identity(), Vector3::new(1.0, 2.0, 3.0));
        let json = serde_json::to_value(pose).unwrap();
        assert_eq!(json["quaternion"], serde_json::json!([1.0, 0.0, 0.0, 0.0]));
        assert_eq!(json["translation"], serde_json::json!([1.0, 2.0, 3.0]));
        let back: Pose = serde_json::from_value(json).unwrap();
        assert_eq!(back, pose);
    }

    #[test]
    fn pose_identity_laws() {
        let p = Vector3::new(0.1, -2.0, 3.3);
        assert_eq!(transform_point(&Pose::identity(), &p), p);
    }

    fn vec3(range: f64) -> impl Strategy<Value = Vector3<f64>> {
        (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vector3::new(x, y, z))
    }

    fn pose() -> impl Strategy<Value = Pose> {
        (vec3(3.0), vec3(5.0)).prop_map(|(phi, t)| Pose::new(Rotation::exp(&phi), t))
    }

    proptest! {
        #[test]
        fn skew_is_cross_product(phi in vec3(10.0), v in vec3(10.0)) {
            let k = skew(&phi);
            prop_assert!((k + k.transpose()).norm() == 0.0);
            prop_assert!((k * v - cross_componentwise(&phi, &v)).norm() <= 1e-14 * (1.0 + phi.norm() * v.norm()));
        }

        #[test]
        fn exp_log_round_trip(axis in vec3(1.0), angle in 1e-6f64..(PI - 1e-6)) {
            prop_assume!(axis.norm() > 1e-3);
            let phi = axis.normalize() * angle;
            let back = log_so3(&exp_so3(&phi));
            prop_assert!((back - phi).norm() <= 1e-9, "{} vs {}", back, phi);
        }

        #[test]
        fn quaternion_matrix_is_orthonormal(q in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)) {
            let n = (q.0 * q.0 + q.1 * q.1 + q.2 * q.2 + q.3 * q.3).sqrt();
            prop_assume!(n > 1e-3);
            let r = Rotation::from_quaternion_wxyz([q.0, q.1, q.2, q.3]);
            let m = r.matrix();
            prop_assert!((m.transpose() * m - Matrix3::identity()).norm() <= 1e-10);
            prop_assert!((m.determinant() - 1.0).abs() <= 1e-10);
            let qq = r.to_quaternion_wxyz();
            let qn = (qq.iter().map(|x| x * x).sum::<f64>()).sqrt();
            prop_assert!((qn - 1.0).abs() <= 1e-12);
            prop_assert!(qq[0] >= 0.0);
        }

        #[test]
        fn compose_with_inverse_is_identity(p in pose()) {
            let id = compose(&p, &inverse(&p));
            prop_assert!(id.rotation.angle() <= 1e-9);
            prop_assert!(id.translation.norm() <= 1e-9);
        }

        #[test]
        fn compose_is_associative(a in pose(), b in pose(), c in pose()) {
            let l = compose(&compose(&a, &b), &c);
            let r = compose(&a, &compose(&b, &c));
            prop_assert!((l.rotation.matrix() - r.rotation.matrix()).norm() <= 1e-9);
            prop_assert!((l.translation - r.translation).norm() <= 1e-9);
        }
    }
}
