use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Rigid transform: rotation matrix plus translation in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    /// Roll-pitch-yaw in the fixed-axis convention `R = Rz(yaw) Ry(pitch) Rx(roll)`.
    pub fn from_xyz_rpy(xyz: [f64; 3], rpy: [f64; 3]) -> Self {
        let r = Rotation3::from_euler_angles(rpy[0], rpy[1], rpy[2]);
        Self::new(r.into_inner(), Vector3::from(xyz))
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let r = Rotation3::from_scaled_axis(axis.normalize() * angle);
        Self::new(r.into_inner(), Vector3::zeros())
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Self {
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// `self * other`: `other` expressed in `self`'s frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Unit quaternion as `[w, x, y, z]` with `w >= 0`.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_matrix(&self.rotation);
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.w, s * q.i, s * q.j, s * q.k]
    }

    pub fn from_quaternion_wxyz(t: Vector3<f64>, q: [f64; 4]) -> Pose {
        let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
        Pose::new(uq.to_rotation_matrix().into_inner(), t)
    }

    /// `max |RᵀR − I|`, plus `|det R − 1|`.
    pub fn orthonormality_residual(&self) -> f64 {
        let r = &self.rotation;
        let off = (r.transpose() * r - Matrix3::identity()).abs().max();
        off.max((r.determinant() - 1.0).abs())
    }

    /// Moves the frame by a body-frame twist held for `dt` seconds
    /// (`self * exp(twist dt)`, translation taken first-order).
    pub fn apply_body_twist(&self, twist: &Twist, dt: f64) -> Pose {
        let delta = Pose::new(
            Rotation3::from_scaled_axis(twist.angular * dt).into_inner(),
            twist.linear * dt,
        );
        self.compose(&delta)
    }

    /// Frame at `position` whose +z axis points at `target`, rotated by
    /// `roll` about that axis.
    pub fn look_at(position: Vector3<f64>, target: Vector3<f64>, roll: f64) -> Pose {
        let z = (target - position).normalize();
        let reference = if z.z.abs() > 0.99 {
            Vector3::x()
        } else {
            Vector3::z()
        };
        let x0 = reference.cross(&z).normalize();
        let y0 = z.cross(&x0);
        let (s, c) = roll.sin_cos();
        let x = c * x0 + s * y0;
        let y = z.cross(&x);
        Pose::new(Matrix3::from_columns(&[x, y, z]), position)
    }
}

/// Linear (m/s) and angular (rad/s) velocity of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(
            Vector3::new(v[0], v[1], v[2]),
            Vector3::new(v[3], v[4], v[5]),
        )
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), 6, "twist needs six components");
        Self::new(
            Vector3::new(v[0], v[1], v[2]),
            Vector3::new(v[3], v[4], v[5]),
        )
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        )
    }

    pub fn to_array(&self) -> [f64; 6] {
        self.to_vector().into()
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|v| v.is_finite())
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation angle of `r` in `[0, π]`, accurate near both ends.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let axis = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin = 0.5 * axis.norm();
    let cos = 0.5 * (r.trace() - 1.0);
    sin.atan2(cos)
}

/// Rotation vector (axis times angle) of `r`.
pub fn rotation_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let vee = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let angle = rotation_angle(r);
    if angle < 1e-6 {
        // θ / (2 sin θ) = 1/2 + θ²/12 + O(θ⁴)
        vee * (0.5 + angle * angle / 12.0)
    } else if angle < PI - 1e-6 {
        vee * (angle / (2.0 * angle.sin()))
    } else {
        Rotation3::from_matrix_unchecked(*r).scaled_axis()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_6;

    #[test]
    fn compose_inverse_is_identity() {
        let p = Pose::from_xyz_rpy([0.1, -0.2, 0.3], [0.4, -0.5, 0.6]);
        let id = p.compose(&p.inverse());
        assert!((id.rotation - Matrix3::identity()).abs().max() < 1e-15);
        assert!(id.translation.norm() < 1e-15);
    }

    #[test]
    fn quaternion_round_trip() {
        let p = Pose::from_xyz_rpy([0.1, 0.2, 0.3], [2.0, -1.0, 0.5]);
        let q = p.quaternion_wxyz();
        assert!((q.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        let back = Pose::from_quaternion_wxyz(p.translation, q);
        assert!((back.rotation - p.rotation).abs().max() < 1e-12);
    }

    #[test]
    fn rotation_angle_of_thirty_degrees() {
        let r = Pose::from_axis_angle(Vector3::x(), FRAC_PI_6).rotation;
        assert!((rotation_angle(&r) - FRAC_PI_6).abs() < 1e-12);
        assert_eq!(rotation_angle(&Matrix3::identity()), 0.0);
    }

    #[test]
    fn rotation_log_inverts_exp() {
        for v in [
            Vector3::new(1e-9, -2e-9, 3e-9),
            Vector3::new(0.01, 0.2, -0.3),
            Vector3::new(2.0, -1.0, 0.5),
        ] {
            let r = Rotation3::from_scaled_axis(v).into_inner();
            assert!((rotation_log(&r) - v).norm() < 1e-14 * (1.0 + v.norm() * 10.0));
        }
    }

    #[test]
    fn look_at_points_z_axis_at_target() {
        let target = Vector3::new(0.4, 0.1, 0.05);
        for (pos, roll) in [
            (Vector3::new(0.4, 0.1, 0.6), 0.3),
            (Vector3::new(0.1, -0.2, 0.3), 2.0),
        ] {
            let p = Pose::look_at(pos, target, roll);
            let z = p.rotation.column(2);
            assert!((z - (target - pos).normalize()).norm() < 1e-12);
            assert!(p.orthonormality_residual() < 1e-12);
        }
    }
}
