//! Geometric stand-in for a physics simulator: judges whether a grasp
//! trajectory would lift its object and meters the work spent finding
//! successful trajectories.
//!
//! The success proxy (`fingertip-contact-lift`, version 1) looks at the
//! final (grasp) frame of a trajectory:
//!
//! 1. at least `min_contacts` fingertips lie within `contact_threshold`
//!    of the object cloud;
//! 2. the estimated surface normals at those contacts oppose each other:
//!    the largest pairwise angle is at least `min_opposition_deg`;
//! 3. raising the root by `lift_height` over [`LIFT_FRAMES`] frames, with
//!    the object carried along, keeps 1 and 2 true at every frame.
//!
//! Every trajectory frame and every lift frame counts as one environment
//! step.

mod meter;
mod normals;

use std::path::Path;

use nalgebra::{Isometry3, Point3, Vector3};
use serde::{Deserialize, Serialize};

pub use meter::{CostMeter, LogCost};
pub use normals::estimate_normals;

use crate::kinematics::model::OriginDoc;
use crate::kinematics::{fk_actuator, HandModel, KinematicsError};
use crate::trajectory::{Trajectory, TrajectoryError};

pub const PROXY_NAME: &str = "fingertip-contact-lift";
pub const PROXY_VERSION: u32 = 1;
pub const TASK_FORMAT: &str = "cgf-lift-task";
pub const TASK_VERSION: u32 = 1;
pub const LIFT_FRAMES: usize = 5;
pub const DEFAULT_LIFT_HEIGHT: f64 = 0.04;
pub const DEFAULT_CONTACT_THRESHOLD: f64 = 0.005;
pub const DEFAULT_MIN_CONTACTS: usize = 3;
pub const DEFAULT_MIN_OPPOSITION_DEG: f64 = 120.0;
pub const NORMAL_NEIGHBORS: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid task: {0}")]
    Task(String),
    #[error("malformed trajectory: {0}")]
    Trajectory(String),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<TrajectoryError> for EvalError {
    fn from(e: TrajectoryError) -> Self {
        EvalError::Trajectory(e.to_string())
    }
}

/// Thresholds of the success proxy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxyConfig {
    pub lift_height: f64,
    pub contact_threshold: f64,
    pub min_contacts: usize,
    pub min_opposition_deg: f64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            lift_height: DEFAULT_LIFT_HEIGHT,
            contact_threshold: DEFAULT_CONTACT_THRESHOLD,
            min_contacts: DEFAULT_MIN_CONTACTS,
            min_opposition_deg: DEFAULT_MIN_OPPOSITION_DEG,
        }
    }
}

impl ProxyConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.lift_height > 0.0 && self.lift_height.is_finite()) {
            return Err(EvalError::Task("lift height must be positive".into()));
        }
        if !(self.contact_threshold > 0.0 && self.contact_threshold.is_finite()) {
            return Err(EvalError::Task("contact threshold must be positive".into()));
        }
        if self.min_contacts == 0 || !(0.0..=180.0).contains(&self.min_opposition_deg) {
            return Err(EvalError::Task("contact count must be positive and the angle within [0, 180]".into()));
        }
        Ok(())
    }
}

/// Task file layout. The cloud is given in the object frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFile {
    pub format: String,
    pub version: u32,
    pub object: String,
    #[serde(default)]
    pub pose: OriginDoc,
    pub cloud: Vec<[f64; 3]>,
    #[serde(default)]
    pub proxy: ProxyConfig,
}

/// An object to grasp and lift.
#[derive(Debug, Clone)]
pub struct LiftTask {
    object: String,
    cloud: Vec<[f64; 3]>,
    pose: OriginDoc,
    config: ProxyConfig,
    world: Vec<Vector3<f64>>,
    normals: Vec<Option<Vector3<f64>>>,
}

impl LiftTask {
    pub fn new(object: impl Into<String>, cloud: Vec<[f64; 3]>, pose: OriginDoc, config: ProxyConfig) -> Result<Self, EvalError> {
        config.validate()?;
        if cloud.is_empty() {
            return Err(EvalError::Task("object cloud is empty".into()));
        }
        let iso: Isometry3<f64> = pose.to_isometry();
        let world: Vec<Vector3<f64>> = cloud.iter().map(|p| (iso * Point3::from(*p)).coords).collect();
        let world_arr: Vec<[f64; 3]> = world.iter().map(|p| [p.x, p.y, p.z]).collect();
        let normals = estimate_normals(&world_arr, NORMAL_NEIGHBORS)?;
        Ok(Self {
            object: object.into(),
            cloud,
            pose,
            config,
            world,
            normals,
        })
    }

    pub fn from_file(doc: TaskFile) -> Result<Self, EvalError> {
        if doc.format != TASK_FORMAT || doc.version != TASK_VERSION {
            return Err(EvalError::Task(format!(
                "expected {TASK_FORMAT} version {TASK_VERSION}, found {} version {}",
                doc.format, doc.version
            )));
        }
        Self::new(doc.object, doc.cloud, doc.pose, doc.proxy)
    }

    pub fn to_file(&self) -> TaskFile {
        TaskFile {
            format: TASK_FORMAT.into(),
            version: TASK_VERSION,
            object: self.object.clone(),
            pose: self.pose.clone(),
            cloud: self.cloud.clone(),
            proxy: self.config.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let doc: TaskFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_file(doc)
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_file())?)?;
        Ok(())
    }

    /// The same scene with every length multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Result<Self, EvalError> {
        let mut pose = self.pose.clone();
        pose.xyz = pose.xyz.map(|v| v * s);
        let config = ProxyConfig {
            lift_height: self.config.lift_height * s,
            contact_threshold: self.config.contact_threshold * s,
            ..self.config.clone()
        };
        Self::new(self.object.clone(), self.cloud.iter().map(|p| p.map(|v| v * s)).collect(), pose, config)
    }

    pub fn object(&self) -> &str {
        &self.object
    }

    pub fn config(&self) -> &ProxyConfig {
        &self.config
    }

    /// Cloud points in the world frame.
    pub fn world_cloud(&self) -> &[Vector3<f64>] {
        &self.world
    }

    pub fn normals(&self) -> &[Option<Vector3<f64>>] {
        &self.normals
    }

    /// Index of and distance to the cloud point nearest `p`.
    pub fn nearest(&self, p: &Vector3<f64>) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, q) in self.world.iter().enumerate() {
            let d = (q - p).norm_squared();
            if d < best.1 {
                best = (i, d);
            }
        }
        (best.0, best.1.sqrt())
    }
}

/// Contact judgement for one set of fingertip positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspCheck {
    /// Distance from each fingertip to the cloud.
    pub tip_distances: Vec<f64>,
    /// Fingertips within the contact threshold.
    pub contacts: Vec<usize>,
    /// Largest angle between contact normals, in degrees.
    pub max_opposition_deg: f64,
}

impl GraspCheck {
    pub fn passes(&self, cfg: &ProxyConfig) -> bool {
        self.contacts.len() >= cfg.min_contacts && self.max_opposition_deg >= cfg.min_opposition_deg
    }
}

/// Applies the contact and opposition tests to fingertip positions.
pub fn check_fingertips(task: &LiftTask, tips: &[Vector3<f64>]) -> GraspCheck {
    let mut tip_distances = Vec::with_capacity(tips.len());
    let mut contacts = Vec::new();
    let mut normals = Vec::new();
    for (k, tip) in tips.iter().enumerate() {
        let (idx, d) = task.nearest(tip);
        tip_distances.push(d);
        if d <= task.config.contact_threshold {
            contacts.push(k);
            if let Some(n) = task.normals[idx] {
                normals.push(n);
            }
        }
    }
    let mut max_opposition_deg: f64 = 0.0;
    for i in 0..normals.len() {
        for j in i + 1..normals.len() {
            let c = normals[i].dot(&normals[j]).clamp(-1.0, 1.0);
            max_opposition_deg = max_opposition_deg.max(c.acos().to_degrees());
        }
    }
    GraspCheck {
        tip_distances,
        contacts,
        max_opposition_deg,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub success: bool,
    pub grasp: GraspCheck,
    /// Whether every lift frame passed.
    pub lift_held: bool,
    pub env_steps: u64,
    pub failure: Option<String>,
}

fn fingertips(model: &HandModel, q: &[f64]) -> Result<Vec<Vector3<f64>>, EvalError> {
    let kp = fk_actuator(model, q)?;
    Ok(model.fingertip_indices().into_iter().map(|i| kp[i]).collect())
}

/// Runs the success proxy on one trajectory. The grasp is the last frame.
pub fn evaluate(model: &HandModel, task: &LiftTask, traj: &Trajectory, meter: &mut CostMeter) -> Result<Evaluation, EvalError> {
    traj.validate()?;
    let traj = traj.to_actuator()?;
    traj.check_model(model)?;
    if !model.has_virtual_root() {
        return Err(EvalError::Input("the lift test needs a model with a virtual root".into()));
    }
    let cfg = &task.config;
    let steps = (traj.frames.len() + LIFT_FRAMES) as u64;
    meter.add_env_steps(steps);
    let grasp_q = traj.frames.last().expect("validated trajectories are non-empty");
    let grasp = check_fingertips(task, &fingertips(model, grasp_q)?);
    let mut failure = None;
    if grasp.contacts.len() < cfg.min_contacts {
        failure = Some(format!("{} fingertip contacts, need {}", grasp.contacts.len(), cfg.min_contacts));
    } else if grasp.max_opposition_deg < cfg.min_opposition_deg {
        failure = Some(format!(
            "contact normals oppose by {:.1} deg, need {:.1}",
            grasp.max_opposition_deg, cfg.min_opposition_deg
        ));
    }
    let mut lift_held = failure.is_none();
    if lift_held {
        for k in 1..=LIFT_FRAMES {
            let dz = cfg.lift_height * k as f64 / LIFT_FRAMES as f64;
            let mut q = grasp_q.clone();
            q[2] += dz;
            // the object rides along, so compare in the lifted object frame
            let tips: Vec<Vector3<f64>> = fingertips(model, &q)?.into_iter().map(|p| p - Vector3::new(0.0, 0.0, dz)).collect();
            if !check_fingertips(task, &tips).passes(cfg) {
                lift_held = false;
                failure = Some(format!("grasp lost at lift frame {k}"));
                break;
            }
        }
    }
    let success = failure.is_none();
    if success {
        meter.add_successes(1);
    }
    Ok(Evaluation {
        success,
        grasp,
        lift_held,
        env_steps: steps,
        failure,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryVerdict {
    pub index: usize,
    pub id: String,
    pub generator: String,
    pub success: bool,
    pub contacts: usize,
    pub max_opposition_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Batch outcome. Costs are read from the meter after the batch, so work
/// metered before the call (planning, say) is included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub proxy: String,
    pub proxy_version: u32,
    pub object: String,
    pub verdicts: Vec<TrajectoryVerdict>,
    pub total: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub env_steps: u64,
    pub collision_checks: u64,
    pub total_cost: u64,
    /// Always `log10`.
    pub log_base: String,
    pub cost_per_success_log: LogCost,
}

/// Evaluates every trajectory and keeps the successful ones in input order.
pub fn batch_filter(
    model: &HandModel,
    task: &LiftTask,
    trajectories: &[Trajectory],
    meter: &mut CostMeter,
) -> Result<(Vec<Trajectory>, BatchReport), EvalError> {
    if trajectories.is_empty() {
        return Err(EvalError::Input("no trajectories to evaluate".into()));
    }
    let mut kept = Vec::new();
    let mut verdicts = Vec::with_capacity(trajectories.len());
    for (index, t) in trajectories.iter().enumerate() {
        let ev = evaluate(model, task, t, meter)?;
        if ev.success {
            kept.push(t.clone());
        }
        verdicts.push(TrajectoryVerdict {
            index,
            id: t.id.clone(),
            generator: t.generator.clone(),
            success: ev.success,
            contacts: ev.grasp.contacts.len(),
            max_opposition_deg: ev.grasp.max_opposition_deg,
            failure: ev.failure,
        });
    }
    let successes = kept.len();
    let report = BatchReport {
        proxy: PROXY_NAME.into(),
        proxy_version: PROXY_VERSION,
        object: task.object.clone(),
        verdicts,
        total: trajectories.len(),
        successes,
        success_rate: successes as f64 / trajectories.len() as f64,
        env_steps: meter.env_steps(),
        collision_checks: meter.collision_checks(),
        total_cost: meter.total_cost(),
        log_base: "log10".into(),
        cost_per_success_log: LogCost::per_success(meter.total_cost(), successes as u64),
    };
    Ok((kept, report))
}
