//! Demonstration file format.
//!
//! A demonstration pairs an object point cloud with a hand motion, given
//! either as human keypoints per frame (to be retargeted) or directly as
//! robot joint vectors in the actuator form. Frames run from the start of
//! the approach to grasp completion.

use std::path::Path;

use serde::{Deserialize, Serialize};

pub const DEMO_FORMAT: &str = "cgf-demonstration";
pub const DEMO_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error("invalid demonstration `{id}`: {reason}")]
    Invalid { id: String, reason: String },
    #[error("unsupported demonstration file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub format: String,
    pub version: u32,
    pub id: String,
    /// Object label, e.g. `sphere-0.030`.
    pub object: String,
    /// Object surface samples in the world frame.
    pub cloud: Vec<[f64; 3]>,
    pub times: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_keypoints: Option<Vec<Vec<[f64; 3]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints: Option<Vec<Vec<f64>>>,
    /// Relative weight of this demonstration in the training loss.
    #[serde(default = "one")]
    pub weight: f64,
}

impl Demonstration {
    pub fn new(id: impl Into<String>, object: impl Into<String>, cloud: Vec<[f64; 3]>, times: Vec<f64>) -> Self {
        Self {
            format: DEMO_FORMAT.to_string(),
            version: DEMO_VERSION,
            id: id.into(),
            object: object.into(),
            cloud,
            times,
            human_keypoints: None,
            joints: None,
            weight: 1.0,
        }
    }

    fn invalid(&self, reason: impl Into<String>) -> DemoError {
        DemoError::Invalid {
            id: self.id.clone(),
            reason: reason.into(),
        }
    }

    pub fn frame_count(&self) -> usize {
        self.times.len()
    }

    pub fn validate(&self) -> Result<(), DemoError> {
        if self.format != DEMO_FORMAT {
            return Err(DemoError::Format(format!("format `{}`, expected `{DEMO_FORMAT}`", self.format)));
        }
        if self.version != DEMO_VERSION {
            return Err(DemoError::Format(format!(
                "version {} is not supported (this build reads version {DEMO_VERSION})",
                self.version
            )));
        }
        if self.cloud.is_empty() {
            return Err(self.invalid("empty object cloud"));
        }
        if self.times.len() < 2 {
            return Err(self.invalid("fewer than two frames"));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(self.invalid("times must be strictly increasing"));
        }
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return Err(self.invalid("weight must be positive"));
        }
        if self.human_keypoints.is_none() && self.joints.is_none() {
            return Err(self.invalid("neither human keypoints nor joints present"));
        }
        if let Some(h) = &self.human_keypoints {
            if h.len() != self.times.len() {
                return Err(self.invalid("keypoint frame count differs from times"));
            }
        }
        if let Some(j) = &self.joints {
            if j.len() != self.times.len() {
                return Err(self.invalid("joint frame count differs from times"));
            }
            if j.iter().flatten().any(|v| !v.is_finite()) {
                return Err(self.invalid("non-finite joint value"));
            }
        }
        let finite = |p: &[f64; 3]| p.iter().all(|v| v.is_finite());
        if !self.cloud.iter().all(finite) {
            return Err(self.invalid("non-finite cloud point"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, DemoError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, DemoError> {
        let d: Demonstration = serde_json::from_str(s)?;
        d.validate()?;
        Ok(d)
    }

    pub fn save(&self, path: &Path) -> Result<(), DemoError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DemoError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Loads every `*.json` demonstration in `dir`, sorted by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<Demonstration>, DemoError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| Demonstration::load(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo() -> Demonstration {
        let mut d = Demonstration::new("d0", "sphere", vec![[0.0, 0.0, 0.0]], vec![0.0, 1.0]);
        d.joints = Some(vec![vec![0.0; 22]; 2]);
        d
    }

    #[test]
    fn round_trip_and_dir_loading() {
        let dir = tempfile::tempdir().unwrap();
        let d = demo();
        d.save(&dir.path().join("b.json")).unwrap();
        let mut e = d.clone();
        e.id = "d1".into();
        e.save(&dir.path().join("a.json")).unwrap();
        let all = load_dir(dir.path()).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].id, "d1");
        assert_eq!(all[1], d);
    }

    #[test]
    fn validation() {
        let mut d = demo();
        d.joints = None;
        assert!(d.validate().is_err());
        let mut d = demo();
        d.times = vec![1.0, 1.0];
        assert!(d.validate().is_err());
        let mut d = demo();
        d.version = 2;
        assert!(matches!(d.validate(), Err(DemoError::Format(_))));
    }
}
