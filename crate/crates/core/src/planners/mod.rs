//! Baseline trajectory generators: a joint-space RRT and CEM-MPC. Both
//! write the shared trajectory container and charge their work to a
//! [`CostMeter`](crate::eval::CostMeter).

mod cem;
mod collision;
mod rrt;

pub use cem::{cem_mpc_plan, refit, CemConfig, CemDynamics, CemIteration, CemPlan, GraspCost, RolloutCost, SimState};
pub use collision::{collision_sphere_check, default_sphere_radii, LINK_SPHERE_RADIUS};
pub use rrt::{rrt_plan, RrtConfig, RrtPlan};

use crate::dynamics::DynamicsError;
use crate::eval::CostMeter;
use crate::kinematics::KinematicsError;

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("invalid planner config: {0}")]
    Config(String),
    #[error("invalid planner input: {0}")]
    Input(String),
    #[error("tree reached {nodes} nodes without connecting to the goal")]
    Exhausted { nodes: usize, meter: CostMeter },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

fn max_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
