use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::pose::{rotation_angle, rotation_log, skew, Pose, Twist};
use crate::error::{Error, Result};

pub const JOINTS: usize = 6;

pub type JointVector = [f64; JOINTS];

/// Standard Denavit-Hartenberg parameters of one revolute joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhJoint {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
    pub theta_offset: f64,
}

impl DhJoint {
    /// `Rz(θ) Tz(d) Tx(a) Rx(α)`.
    pub fn transform(&self, q: f64) -> Pose {
        let (st, ct) = (q + self.theta_offset).sin_cos();
        let (sa, ca) = self.alpha.sin_cos();
        Pose::new(
            Matrix3::new(ct, -st * ca, st * sa, st, ct * ca, -ct * sa, 0.0, sa, ca),
            Vector3::new(self.a * ct, self.a * st, self.d),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhChain {
    pub joints: [DhJoint; JOINTS],
    pub joint_limits: [(f64, f64); JOINTS],
    pub velocity_limits: JointVector,
    /// Camera pose in the end-effector (flange) frame.
    pub hand_eye: Pose,
}

impl DhChain {
    /// UR5e with its published standard DH table, ±2π joint limits, π rad/s
    /// velocity limits and a camera 3 cm in front of the flange.
    pub fn ur5e() -> Self {
        let a = [0.0, -0.425, -0.3922, 0.0, 0.0, 0.0];
        let d = [0.1625, 0.0, 0.0, 0.1333, 0.0997, 0.0996];
        let alpha = [FRAC_PI_2, 0.0, 0.0, FRAC_PI_2, -FRAC_PI_2, 0.0];
        Self::from_dh(a, d, alpha, Pose::from_xyz_rpy([0.0, 0.0, 0.03], [0.0; 3]))
    }

    pub fn from_dh(
        a: JointVector,
        d: JointVector,
        alpha: JointVector,
        hand_eye: Pose,
    ) -> Self {
        let joints = std::array::from_fn(|i| DhJoint {
            a: a[i],
            d: d[i],
            alpha: alpha[i],
            theta_offset: 0.0,
        });
        Self {
            joints,
            joint_limits: [(-TAU, TAU); JOINTS],
            velocity_limits: [PI; JOINTS],
            hand_eye,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, (lo, hi)) in self.joint_limits.iter().enumerate() {
            if !(lo < hi) {
                return Err(Error::Config(format!("joint {i} limits must satisfy min < max")));
            }
        }
        if self.velocity_limits.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("velocity limits must be positive".into()));
        }
        Ok(())
    }

    pub fn within_limits(&self, q: &JointVector) -> bool {
        q.iter()
            .zip(&self.joint_limits)
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointState {
    pub q: JointVector,
    pub qdot: JointVector,
}

impl JointState {
    pub fn at_rest(q: JointVector) -> Self {
        Self {
            q,
            qdot: [0.0; JOINTS],
        }
    }

    /// True when any joint position lies outside the chain's limits.
    pub fn violates_limits(&self, chain: &DhChain) -> bool {
        !chain.within_limits(&self.q)
    }
}

/// All link frames of one configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardKinematics {
    /// `frames[0]` is the base, `frames[i]` the frame after joint `i`.
    pub frames: [Pose; JOINTS + 1],
    pub camera: Pose,
}

impl ForwardKinematics {
    pub fn end_effector(&self) -> &Pose {
        &self.frames[JOINTS]
    }
}

pub fn forward_kinematics(chain: &DhChain, q: &JointVector) -> ForwardKinematics {
    let mut frames = [Pose::identity(); JOINTS + 1];
    for i in 0..JOINTS {
        frames[i + 1] = frames[i].compose(&chain.joints[i].transform(q[i]));
    }
    let camera = frames[JOINTS].compose(&chain.hand_eye);
    ForwardKinematics { frames, camera }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianFrame {
    Base,
    EndEffector,
}

/// Geometric Jacobian mapping `q̇` to the end-effector twist `(v, ω)`,
/// expressed in the base or the end-effector frame.
pub fn geometric_jacobian(chain: &DhChain, q: &JointVector, frame: JacobianFrame) -> Matrix6<f64> {
    let fk = forward_kinematics(chain, q);
    let p_ee = fk.end_effector().translation;
    let mut j = Matrix6::zeros();
    for i in 0..JOINTS {
        let prev = &fk.frames[i];
        let z = prev.rotation.column(2).into_owned();
        let lin = z.cross(&(p_ee - prev.translation));
        j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
        j.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
    }
    match frame {
        JacobianFrame::Base => j,
        JacobianFrame::EndEffector => {
            let rt = fk.end_effector().rotation.transpose();
            let mut block = Matrix6::zeros();
            block.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
            block.fixed_view_mut::<3, 3>(3, 3).copy_from(&rt);
            block * j
        }
    }
}

/// Twist transformation `[R, [t]×R; 0, R]` re-expressing a twist given in the
/// child frame of `transform` (e.g. the camera) in its parent frame (e.g. the
/// end effector).
pub fn twist_transform(transform: &Pose) -> Matrix6<f64> {
    let r = transform.rotation;
    let mut v = Matrix6::zeros();
    v.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    v.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(skew(&transform.translation) * r));
    v.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    v
}

/// Joint velocities realizing a camera-frame twist.
///
/// Fails with [`Error::Singularity`] when `|det ᵉJₑ| <= threshold`. The
/// unclamped solution satisfies `J q̇ = v_ee`; if any joint exceeds its
/// velocity limit the whole vector is scaled down uniformly.
pub fn resolve_joint_velocities(
    chain: &DhChain,
    q: &JointVector,
    camera_twist: &Twist,
    threshold: f64,
) -> Result<JointVector> {
    let j = geometric_jacobian(chain, q, JacobianFrame::EndEffector);
    let det = j.determinant();
    if det.abs() <= threshold || !det.is_finite() {
        return Err(Error::Singularity {
            det: det.abs(),
            threshold,
        });
    }
    let v_ee = twist_transform(&chain.hand_eye) * camera_twist.to_vector();
    let qdot = j.lu().solve(&v_ee).ok_or(Error::Singularity {
        det: det.abs(),
        threshold,
    })?;
    let scale = qdot
        .iter()
        .zip(&chain.velocity_limits)
        .map(|(v, lim)| v.abs() / lim)
        .fold(1.0, f64::max);
    Ok(std::array::from_fn(|i| qdot[i] / scale))
}

/// `|det ᵉJₑ|`, the quantity compared against the singularity threshold.
pub fn jacobian_determinant(chain: &DhChain, q: &JointVector) -> f64 {
    geometric_jacobian(chain, q, JacobianFrame::EndEffector)
        .determinant()
        .abs()
}

/// Translation error (m) and rotation error (rad, in `[0, π]`) between two poses.
pub fn pose_errors(current: &Pose, desired: &Pose) -> (f64, f64) {
    let e_trans = (current.translation - desired.translation).norm();
    let e_rot = rotation_angle(&(desired.rotation.transpose() * current.rotation));
    (e_trans, e_rot)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub damping: f64,
    pub max_step: f64,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-10,
            damping: 1e-4,
            max_step: 0.3,
        }
    }
}

/// Damped Newton iteration for a joint vector placing the camera at `target`,
/// starting from `seed`. Returns `None` when it fails to converge or leaves
/// the joint limits.
pub fn inverse_kinematics(
    chain: &DhChain,
    target: &Pose,
    seed: &JointVector,
    opts: IkOptions,
) -> Option<JointVector> {
    let mut q = *seed;
    for _ in 0..opts.max_iterations {
        let fk = forward_kinematics(chain, &q);
        let cam = fk.camera;
        let err = Vector6::from_iterator(
            (target.translation - cam.translation)
                .iter()
                .copied()
                .chain(rotation_log(&(target.rotation * cam.rotation.transpose())).iter().copied()),
        );
        if err.norm() < opts.tolerance {
            return chain.within_limits(&q).then_some(q);
        }
        // Camera-point Jacobian in the base frame.
        let mut j = geometric_jacobian(chain, &q, JacobianFrame::Base);
        let offset = cam.translation - fk.end_effector().translation;
        let jw = j.fixed_view::<3, 6>(3, 0).into_owned();
        let jv = j.fixed_view::<3, 6>(0, 0).into_owned() - skew(&offset) * jw;
        j.fixed_view_mut::<3, 6>(0, 0).copy_from(&jv);

        let jjt = j * j.transpose() + Matrix6::identity() * opts.damping.powi(2);
        let step = j.transpose() * jjt.lu().solve(&err)?;
        let scale = (step.amax() / opts.max_step).max(1.0);
        for i in 0..JOINTS {
            q[i] += step[i] / scale;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_chain_stacks_offsets() {
        let chain = DhChain::from_dh(
            [0.0; 6],
            [0.1, 0.2, 0.3, 0.05, 0.07, 0.01],
            [0.0; 6],
            Pose::identity(),
        );
        let fk = forward_kinematics(&chain, &[0.0; 6]);
        let ee = fk.end_effector();
        assert!((ee.translation - Vector3::new(0.0, 0.0, 0.73)).norm() < 1e-15);
        assert_eq!(ee.rotation, Matrix3::identity());
        assert_eq!(fk.camera, *ee);
    }

    #[test]
    fn identity_twist_transform() {
        assert_eq!(twist_transform(&Pose::identity()), Matrix6::identity());
    }

    #[test]
    fn offset_camera_turns_rotation_into_linear_velocity() {
        // Camera 0.1 m along z of the parent, spinning about x at 1 rad/s:
        // the parent origin moves with t × ω = (0, 0.1, 0).
        let v = twist_transform(&Pose::from_translation(Vector3::new(0.0, 0.0, 0.1)));
        let out = v * Vector6::new(0.0, 0.0, 0.0, 1.0, 0.0, 0.0);
        let expected = Vector6::new(0.0, 0.1, 0.0, 1.0, 0.0, 0.0);
        assert!((out - expected).norm() < 1e-15);
    }

    #[test]
    fn zero_twist_resolves_to_zero() {
        let chain = DhChain::ur5e();
        let q = [0.1, -1.2, 1.4, -1.7, -1.5, 0.2];
        let qd = resolve_joint_velocities(&chain, &q, &Twist::zero(), 1e-4).unwrap();
        assert!(qd.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn straight_elbow_is_singular() {
        let chain = DhChain::ur5e();
        let q = [0.3, -1.0, 0.0, -1.2, -1.5, 0.4];
        assert!(jacobian_determinant(&chain, &q) < 1e-8);
        let err = resolve_joint_velocities(&chain, &q, &Twist::zero(), 1e-4).unwrap_err();
        assert!(matches!(err, Error::Singularity { .. }));
    }

    #[test]
    fn velocity_clamp_preserves_direction() {
        let chain = DhChain::ur5e();
        let q = [0.1, -1.2, 1.4, -1.7, -1.5, 0.2];
        let twist = Twist::new(Vector3::new(3.0, -2.0, 1.0), Vector3::new(4.0, 0.0, -5.0));
        let qd = resolve_joint_velocities(&chain, &q, &twist, 1e-4).unwrap();
        let peak = qd.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!((peak - PI).abs() < 1e-12);

        let small = Twist::new(twist.linear * 1e-3, twist.angular * 1e-3);
        let qs = resolve_joint_velocities(&chain, &q, &small, 1e-4).unwrap();
        let ratio = qd[0] / qs[0];
        for i in 0..JOINTS {
            assert!((qd[i] - ratio * qs[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn pose_error_examples() {
        let a = Pose::from_xyz_rpy([0.3, 0.1, 0.5], [0.1, 0.2, 0.3]);
        assert_eq!(pose_errors(&a, &a), (0.0, 0.0));
        let mut b = a;
        b.translation.z += 0.05;
        let (et, er) = pose_errors(&a, &b);
        assert!((et - 0.05).abs() < 1e-15);
        assert_eq!(er, 0.0);
    }

    #[test]
    fn ik_recovers_reachable_pose() {
        let chain = DhChain::ur5e();
        let q_true = [0.2, -1.3, 1.5, -1.8, -1.6, 0.3];
        let target = forward_kinematics(&chain, &q_true).camera;
        let seed = [0.0, -1.5, 1.6, -1.6, -1.5, 0.0];
        let q = inverse_kinematics(&chain, &target, &seed, IkOptions::default()).unwrap();
        let (et, er) = pose_errors(&forward_kinematics(&chain, &q).camera, &target);
        assert!(et < 1e-9 && er < 1e-9, "{et} {er}");
    }
}
