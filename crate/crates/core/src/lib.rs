//! Continuous grasping function toolkit.
//!
//! Human hand keypoint trajectories are retargeted onto a dexterous robot
//! hand, a conditional VAE with a time-conditioned implicit decoder is
//! trained on the resulting joint trajectories, and sampled trajectories are
//! executed with an inverse-dynamics-augmented PD controller, compared with
//! RRT and CEM-MPC baselines, and scored for smoothness and search cost.

pub mod autodiff;
pub mod cgf;
pub mod demo;
pub mod dynamics;
pub mod eval;
pub mod kinematics;
pub mod metrics;
pub mod pipeline;
pub mod planners;
pub mod retarget;
pub mod shapes;
pub mod trajectory;
