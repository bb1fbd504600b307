//! Conditional VAE whose decoder is a continuous function of time.
//!
//! The encoder sees the object point cloud and a fixed-length joint
//! trajectory; the decoder maps `(t, z, object feature)` to one hand
//! configuration in the continuous 25-number form. Time is reversed:
//! `t = 0` is grasp completion and `t = 1` the start of the approach.

mod data;
mod decode;
mod loss;
mod params;
mod train;

pub use data::{prepare_dataset, resample_joints, PreparedDataset, PreparedDemo};
pub use decode::{
    central_second_derivative, decode, decode_derivatives, encode, object_feature, reparameterize,
    sample_trajectories, ConditionedDecoder, DecodedState, DERIVATIVE_STEP,
};
pub use loss::{kl_divergence, loss, loss_and_gradients, LossComponents, LossWeights};
pub use params::{CgfArchitecture, CgfParams};
pub use train::{demo_noise, train, EpochRecord, TrainConfig, TrainOutcome};

use crate::autodiff::AutodiffError;
use crate::kinematics::KinematicsError;

pub const OBJECT_FEATURE_DIM: usize = 1024;
pub const LATENT_DIM: usize = 256;
pub const HAND_FEATURE_DIM: usize = 64;
pub const CVAE_HIDDEN: usize = 256;
pub const FRAMES: usize = 20;
pub const CONFIG_WIDTH: usize = 25;
pub const ACTUATOR_WIDTH: usize = 22;
/// Bounds applied to the log-variance head.
pub const LOGVAR_CLAMP: (f64, f64) = (-20.0, 20.0);

#[derive(Debug, thiserror::Error)]
pub enum CgfError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}; last good parameters kept")]
    NonFinite {
        epoch: usize,
        last_good: Box<CgfParams>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
