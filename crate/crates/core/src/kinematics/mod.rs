//! Kinematic model of the hand: rotation encodings, the declarative model
//! file, forward kinematics to keypoints and their Jacobians.

mod fk;
pub mod model;
pub mod rotation;

pub use fk::{
    actuator_to_continuous, continuous_to_actuator, continuous_velocity_to_actuator, fk, fk_actuator, fk_jacobian,
    fk_jacobian_actuator, fk_op_count, flatten_keypoints, JointConfig, CONTINUOUS_ROOT_WIDTH,
};
pub use model::{HandModel, Joint, JointKind, Keypoint, LinkInertial};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("degenerate 6D rotation: columns are zero or parallel")]
    DegenerateRotation,
    #[error("non-finite joint value")]
    NonFinite,
    #[error("invalid hand model: {0}")]
    Invalid(String),
    #[error("cannot read hand model: {0}")]
    Parse(String),
}
