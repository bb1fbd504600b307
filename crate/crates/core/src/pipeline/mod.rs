//! Synthetic demonstrations, pipeline configuration and the staged
//! end-to-end run.

mod config;
mod stages;
mod synth;

pub use config::{
    derive_seed, CemSettings, ObjectEntry, PipelineConfig, RrtSettings, SampleSettings, Stage, StageToggles,
    CONFIG_FORMAT, CONFIG_VERSION,
};
pub use stages::{
    run_pipeline, EvaluationRecord, PipelineReport, StageRun, StageStatus, TrajectoryBundle, BUNDLE_FORMAT,
    BUNDLE_VERSION,
};
pub use synth::{generate_synthetic_demos, object_center, sample_mesh_points, SyntheticDemoSpec, CLOUD_POINTS, CONTACT_TOLERANCE};

use crate::cgf::CgfError;
use crate::demo::DemoError;
use crate::dynamics::DynamicsError;
use crate::eval::EvalError;
use crate::kinematics::KinematicsError;
use crate::metrics::MetricsError;
use crate::planners::PlanError;
use crate::retarget::RetargetError;
use crate::trajectory::TrajectoryError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    /// Bad configuration or input files; the CLI exits with code 2.
    #[error("validation error: {0}")]
    Validation(String),
    /// A stage failed while running; the CLI exits with code 3.
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Retarget(#[from] RetargetError),
    #[error(transparent)]
    Demo(#[from] DemoError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Cgf(#[from] CgfError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 2,
            _ => 3,
        }
    }
}
