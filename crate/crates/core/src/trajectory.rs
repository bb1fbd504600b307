//! Versioned trajectory container shared by the generator, the planners,
//! the controller and the metrics.
//!
//! Times use the phase convention of the generator: `1` at the start of the
//! motion and `0` at grasp completion. Frames are always stored in
//! start-to-grasp order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::kinematics::{continuous_to_actuator, HandModel, KinematicsError};

pub const TRAJECTORY_FORMAT: &str = "cgf-trajectory";
pub const TRAJECTORY_VERSION: u32 = 1;

/// Which configuration encoding the frames use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfigForm {
    /// Translation, 6D rotation, finger angles.
    Continuous,
    /// Translation, root joint angles, finger angles.
    Actuator,
}

#[derive(Debug, thiserror::Error)]
pub enum TrajectoryError {
    #[error("{0}")]
    Invalid(String),
    #[error("unsupported trajectory file: {0}")]
    Format(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub format: String,
    pub version: u32,
    pub id: String,
    /// Producing method, e.g. `cgf`, `rrt`, `cem`, `linear`, `demo`.
    pub generator: String,
    pub form: ConfigForm,
    pub times: Vec<f64>,
    pub frames: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocities: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accelerations: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_hash: Option<String>,
    /// Set on state histories produced by a controller rollout.
    #[serde(default)]
    pub executed: bool,
}

/// Evenly spaced phases from 1 down to 0, `frames` entries.
pub fn phase_grid(frames: usize) -> Vec<f64> {
    match frames {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|k| (n - 1 - k) as f64 / (n - 1) as f64).collect(),
    }
}

impl Trajectory {
    pub fn new(id: impl Into<String>, generator: impl Into<String>, form: ConfigForm, times: Vec<f64>, frames: Vec<Vec<f64>>) -> Self {
        Self {
            format: TRAJECTORY_FORMAT.to_string(),
            version: TRAJECTORY_VERSION,
            id: id.into(),
            generator: generator.into(),
            form,
            times,
            frames,
            velocities: None,
            accelerations: None,
            z: None,
            seed: None,
            model_hash: None,
            executed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if self.format != TRAJECTORY_FORMAT {
            return Err(TrajectoryError::Format(format!(
                "format `{}`, expected `{TRAJECTORY_FORMAT}`",
                self.format
            )));
        }
        if self.version != TRAJECTORY_VERSION {
            return Err(TrajectoryError::Format(format!(
                "version {} is not supported (this build reads version {TRAJECTORY_VERSION}); regenerate the file",
                self.version
            )));
        }
        if self.frames.is_empty() {
            return Err(TrajectoryError::Invalid("trajectory has no frames".into()));
        }
        if self.times.len() != self.frames.len() {
            return Err(TrajectoryError::Invalid(format!(
                "{} times for {} frames",
                self.times.len(),
                self.frames.len()
            )));
        }
        let width = self.frames[0].len();
        if self.frames.iter().any(|f| f.len() != width) {
            return Err(TrajectoryError::Invalid("frames have differing widths".into()));
        }
        if self.frames.iter().flatten().chain(&self.times).any(|v| !v.is_finite()) {
            return Err(TrajectoryError::Invalid("non-finite value".into()));
        }
        for extra in [&self.velocities, &self.accelerations].into_iter().flatten() {
            if extra.len() != self.frames.len() || extra.iter().any(|f| f.len() != width) {
                return Err(TrajectoryError::Invalid("derivative arrays do not match frames".into()));
            }
        }
        Ok(())
    }

    /// Copy with frames converted to the actuator form. Derivatives are
    /// dropped when a conversion is needed.
    pub fn to_actuator(&self) -> Result<Trajectory, TrajectoryError> {
        match self.form {
            ConfigForm::Actuator => Ok(self.clone()),
            ConfigForm::Continuous => {
                let frames = self
                    .frames
                    .iter()
                    .map(|f| continuous_to_actuator(f))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Trajectory {
                    form: ConfigForm::Actuator,
                    frames,
                    velocities: None,
                    accelerations: None,
                    ..self.clone()
                })
            }
        }
    }

    /// `count` frames spaced evenly in frame index, interpolating linearly
    /// between neighbors; times are the phase grid. Derivatives are dropped.
    pub fn resampled(&self, count: usize) -> Result<Trajectory, TrajectoryError> {
        if self.frames.is_empty() || count == 0 {
            return Err(TrajectoryError::Invalid("cannot resample an empty trajectory".into()));
        }
        let last = (self.frames.len() - 1) as f64;
        let frames = (0..count)
            .map(|k| {
                let x = if count == 1 { last } else { last * k as f64 / (count - 1) as f64 };
                let i = (x.floor() as usize).min(self.frames.len().saturating_sub(2));
                let s = x - i as f64;
                match self.frames.get(i + 1) {
                    Some(next) => self.frames[i].iter().zip(next).map(|(a, b)| a + s * (b - a)).collect(),
                    None => self.frames[i].clone(),
                }
            })
            .collect();
        Ok(Trajectory {
            times: phase_grid(count),
            frames,
            velocities: None,
            accelerations: None,
            ..self.clone()
        })
    }

    /// Checks the frame width against `model`.
    pub fn check_model(&self, model: &HandModel) -> Result<(), TrajectoryError> {
        let expected = match self.form {
            ConfigForm::Actuator => model.dof(),
            ConfigForm::Continuous => model.dof() + 3,
        };
        match self.frames.first() {
            Some(f) if f.len() == expected => Ok(()),
            Some(f) => Err(TrajectoryError::Invalid(format!(
                "frame width {} does not match the model ({expected})",
                f.len()
            ))),
            None => Err(TrajectoryError::Invalid("trajectory has no frames".into())),
        }
    }

    pub fn to_json(&self) -> Result<String, TrajectoryError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, TrajectoryError> {
        let value: serde_json::Value = serde_json::from_str(s)?;
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(TRAJECTORY_VERSION as u64) {
            return Err(TrajectoryError::Format(format!(
                "version {version:?} is not supported (this build reads version {TRAJECTORY_VERSION}); regenerate the file"
            )));
        }
        let t: Trajectory = serde_json::from_value(value)?;
        t.validate()?;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrajectoryError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrajectoryError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
