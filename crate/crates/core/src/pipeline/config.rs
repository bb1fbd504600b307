use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PipelineError, SyntheticDemoSpec};
use crate::cgf::{TrainConfig, FRAMES};
use crate::eval::ProxyConfig;
use crate::planners::{CemConfig, RrtConfig, LINK_SPHERE_RADIUS};
use crate::retarget::RetargetConfig;
use crate::shapes::Shape;

pub const CONFIG_FORMAT: &str = "cgf-pipeline-config";
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageToggles {
    pub gen_demos: bool,
    pub retarget: bool,
    pub train: bool,
    pub sample: bool,
    pub plan_rrt: bool,
    pub plan_cem: bool,
    pub evaluate: bool,
    pub report: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self::all(true)
    }
}

impl StageToggles {
    pub fn all(on: bool) -> Self {
        Self {
            gen_demos: on,
            retarget: on,
            train: on,
            sample: on,
            plan_rrt: on,
            plan_cem: on,
            evaluate: on,
            report: on,
        }
    }

    /// Only the named stage enabled.
    pub fn only(stage: Stage) -> Self {
        let mut t = Self::all(false);
        *t.flag_mut(stage) = true;
        t
    }

    pub fn enabled(&self, stage: Stage) -> bool {
        let mut copy = *self;
        *copy.flag_mut(stage)
    }

    fn flag_mut(&mut self, stage: Stage) -> &mut bool {
        match stage {
            Stage::GenDemos => &mut self.gen_demos,
            Stage::Retarget => &mut self.retarget,
            Stage::Train => &mut self.train,
            Stage::Sample => &mut self.sample,
            Stage::PlanRrt => &mut self.plan_rrt,
            Stage::PlanCem => &mut self.plan_cem,
            Stage::Evaluate => &mut self.evaluate,
            Stage::Report => &mut self.report,
        }
    }
}

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    GenDemos,
    Retarget,
    Train,
    Sample,
    PlanRrt,
    PlanCem,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::GenDemos,
        Stage::Retarget,
        Stage::Train,
        Stage::Sample,
        Stage::PlanRrt,
        Stage::PlanCem,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::GenDemos => "gen-demos",
            Stage::Retarget => "retarget",
            Stage::Train => "train",
            Stage::Sample => "sample",
            Stage::PlanRrt => "plan-rrt",
            Stage::PlanCem => "plan-cem",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

/// One synthetic object with its training and held-out demonstration
/// counts. Held-out demonstrations supply the planners' start and goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub spec: SyntheticDemoSpec,
    pub train: usize,
    pub held_out: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleSettings {
    pub codes_per_object: usize,
    pub frames: usize,
}

impl Default for SampleSettings {
    fn default() -> Self {
        Self {
            codes_per_object: 100,
            frames: FRAMES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RrtSettings {
    #[serde(flatten)]
    pub config: RrtConfig,
    /// Plans in total, spread over the held-out demonstrations.
    pub plans: usize,
    pub link_radius: f64,
}

impl Default for RrtSettings {
    fn default() -> Self {
        Self {
            config: RrtConfig::default(),
            plans: 20,
            link_radius: LINK_SPHERE_RADIUS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CemSettings {
    #[serde(flatten)]
    pub config: CemConfig,
    pub plans: usize,
    /// Closed-loop bandwidth of the tracking gains, rad/s.
    pub bandwidth: f64,
    /// Weight of the fingertip contact term in the cost.
    pub contact_bonus: f64,
}

impl Default for CemSettings {
    fn default() -> Self {
        Self {
            config: CemConfig::default(),
            plans: 4,
            bandwidth: crate::dynamics::benchmark::HAND_BANDWIDTH,
            contact_bonus: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub format: String,
    pub version: u32,
    /// Demonstration files; `gen-demos` writes here and `retarget` reads.
    pub data_dir: PathBuf,
    /// Root of every stage artifact.
    pub out_dir: PathBuf,
    /// Hand model file; the bundled toy hand when absent.
    pub model: Option<PathBuf>,
    /// Every module seed is derived from this one.
    pub seed: u64,
    pub stages: StageToggles,
    pub objects: Vec<ObjectEntry>,
    pub retarget: RetargetConfig,
    pub train: TrainConfig,
    pub sample: SampleSettings,
    pub rrt: RrtSettings,
    pub cem: CemSettings,
    pub proxy: ProxyConfig,
    /// Baselines are resampled to this many frames before smoothness is
    /// measured, so that all methods are compared at one resolution.
    pub metric_frames: usize,
    pub plot_data: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let sphere = SyntheticDemoSpec::default();
        let cube = SyntheticDemoSpec {
            object: Shape::Box {
                half_extents: [0.025, 0.05, 0.04],
            },
            ..SyntheticDemoSpec::default()
        };
        Self {
            format: CONFIG_FORMAT.into(),
            version: CONFIG_VERSION,
            data_dir: PathBuf::from("data/demos"),
            out_dir: PathBuf::from("out"),
            model: None,
            seed: 0,
            stages: StageToggles::default(),
            objects: vec![
                ObjectEntry {
                    spec: sphere,
                    train: 4,
                    held_out: 10,
                },
                ObjectEntry {
                    spec: cube,
                    train: 4,
                    held_out: 10,
                },
            ],
            retarget: RetargetConfig::default(),
            train: TrainConfig {
                epochs: 300,
                ..TrainConfig::default()
            },
            sample: SampleSettings::default(),
            rrt: RrtSettings::default(),
            cem: CemSettings::default(),
            proxy: ProxyConfig::default(),
            metric_frames: FRAMES,
            plot_data: false,
        }
    }
}

impl PipelineConfig {
    /// Desk-scale defaults with the full latent-code count and epochs.
    pub fn full_scale() -> Self {
        let mut c = Self::default();
        c.sample.codes_per_object = 10_000 / c.objects.len().max(1);
        c.train.epochs = 1000;
        c
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Validation(format!("config {}: {e}", path.display())))?;
        let format = value.get("format").and_then(|v| v.as_str());
        let version = value.get("version").and_then(|v| v.as_u64());
        if format.is_some_and(|f| f != CONFIG_FORMAT) || version.is_some_and(|v| v != CONFIG_VERSION as u64) {
            return Err(PipelineError::Validation(format!(
                "config {} has format {format:?} version {version:?}; this build reads `{CONFIG_FORMAT}` version {CONFIG_VERSION}",
                path.display()
            )));
        }
        let cfg: Self = serde_json::from_value(value)
            .map_err(|e| PipelineError::Validation(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Validation(m));
        if self.format != CONFIG_FORMAT || self.version != CONFIG_VERSION {
            return bad(format!("config must declare format `{CONFIG_FORMAT}` version {CONFIG_VERSION}"));
        }
        for o in &self.objects {
            o.spec.validate()?;
        }
        let mut labels: Vec<String> = self.objects.iter().map(|o| o.spec.object_label()).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return bad("two object entries share a label".into());
        }
        let invalid = |e: &dyn std::fmt::Display| PipelineError::Validation(e.to_string());
        self.retarget.validate().map_err(|e| invalid(&e))?;
        self.train.validate().map_err(|e| invalid(&e))?;
        self.rrt.config.validate().map_err(|e| invalid(&e))?;
        self.cem.config.validate().map_err(|e| invalid(&e))?;
        self.proxy.validate().map_err(|e| invalid(&e))?;
        if self.sample.frames < 2 || self.metric_frames < crate::metrics::MIN_FRAMES {
            return bad(format!(
                "sample frames must be >= 2 and metric_frames >= {}",
                crate::metrics::MIN_FRAMES
            ));
        }
        if !(self.rrt.link_radius >= 0.0) || !(self.cem.bandwidth > 0.0) || !(self.cem.contact_bonus >= 0.0) {
            return bad("link radius and contact bonus must be non-negative, bandwidth positive".into());
        }
        Ok(())
    }
}

/// Seed for one consumer of the global seed.
pub fn derive_seed(global: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}
