//! Serial-arm kinematics: DH forward kinematics, geometric Jacobians, twist
//! transformations and resolution of camera twists into joint velocities.

mod chain;
mod pose;

pub use chain::{
    forward_kinematics, geometric_jacobian, inverse_kinematics, jacobian_determinant,
    pose_errors, resolve_joint_velocities, twist_transform, DhChain, DhJoint, ForwardKinematics,
    IkOptions, JacobianFrame, JointState, JointVector, JOINTS,
};
pub use pose::{rotation_angle, rotation_log, skew, Pose, Twist};
