use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{derive_seed, PipelineConfig, Stage};
use super::{generate_synthetic_demos, PipelineError};
use crate::autodiff::{Checkpoint, Tensor};
use crate::cgf::{sample_trajectories, train, CgfParams};
use crate::demo::{load_dir, Demonstration};
use crate::dynamics::{Controller, DynamicsModel, PdGains, RolloutConfig};
use crate::eval::{batch_filter, BatchReport, CostMeter, LiftTask};
use crate::kinematics::model::OriginDoc;
use crate::kinematics::{fk_actuator, HandModel};
use crate::metrics::{compare_methods, plot_data_csv, smoothness, ComparisonTable, MethodResults};
use crate::planners::{
    cem_mpc_plan, collision_sphere_check, default_sphere_radii, rrt_plan, CemDynamics, GraspCost, PlanError, SimState,
};
use crate::retarget::{retarget_trajectory, HumanFrame, HumanTrajectory};
use crate::trajectory::{phase_grid, ConfigForm, Trajectory};

pub const BUNDLE_FORMAT: &str = "cgf-trajectory-bundle";
pub const BUNDLE_VERSION: u32 = 1;
const RECORD_FORMAT: &str = "cgf-stage-record";
const RECORD_VERSION: u32 = 1;

/// All trajectories of one method on one object, with the work metered
/// while producing them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBundle {
    pub format: String,
    pub version: u32,
    pub method: String,
    pub object: String,
    pub cloud: Vec<[f64; 3]>,
    pub meter: CostMeter,
    /// Plans that produced no trajectory.
    pub failures: usize,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryBundle {
    pub fn new(method: &str, object: &str, cloud: Vec<[f64; 3]>) -> Self {
        Self {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            method: method.into(),
            object: object.into(),
            cloud,
            meter: CostMeter::new(),
            failures: 0,
            trajectories: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let b: Self = read_json(path)?;
        if b.format != BUNDLE_FORMAT || b.version != BUNDLE_VERSION {
            return Err(PipelineError::Validation(format!(
                "{}: format `{}` version {} is not supported (expected `{BUNDLE_FORMAT}` version {BUNDLE_VERSION}); rerun the producing stage",
                path.display(),
                b.format,
                b.version
            )));
        }
        Ok(b)
    }
}

/// Evaluation of one bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub method: String,
    pub object: String,
    /// Planning work plus evaluation steps.
    pub meter: CostMeter,
    pub planning_failures: usize,
    pub batch: Option<BatchReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageRun {
    Ran,
    Skipped,
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: Stage,
    pub status: StageRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub stages: Vec<StageStatus>,
    /// Report files, relative to the output directory.
    pub report_files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StageRecord {
    format: String,
    version: u32,
    input_hash: String,
    outputs: BTreeMap<String, String>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn sha_file(path: &Path) -> Result<String, PipelineError> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// Files below `dir`, sorted, with paths relative to `dir`.
fn list_files(dir: &Path) -> Result<Vec<(String, PathBuf)>, PipelineError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).expect("listed below dir").to_string_lossy().replace('\\', "/");
                out.push((rel, p));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn fresh_dir(dir: &Path) -> Result<(), PipelineError> {
    if dir.exists() {
        std::fs::remove_dir_all(dir)?;
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn require_dir(dir: &Path, hint: &str) -> Result<(), PipelineError> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(PipelineError::Validation(format!("{} does not exist; {hint}", dir.display())))
    }
}

struct InputHash(Sha256);

impl InputHash {
    fn new(stage: Stage, model_id: &str) -> Self {
        let mut h = Sha256::new();
        h.update(stage.name().as_bytes());
        h.update(model_id.as_bytes());
        Self(h)
    }

    fn json<T: Serialize>(&mut self, v: &T) -> Result<(), PipelineError> {
        self.0.update(serde_json::to_vec(v)?);
        Ok(())
    }

    fn files(&mut self, dir: &Path) -> Result<(), PipelineError> {
        for (rel, p) in list_files(dir)? {
            self.0.update(rel.as_bytes());
            self.0.update(sha_file(&p)?.as_bytes());
        }
        Ok(())
    }

    fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

struct Context<'a> {
    cfg: &'a PipelineConfig,
    model: HandModel,
    model_id: String,
}

impl Context<'_> {
    fn out(&self, rel: &str) -> PathBuf {
        self.cfg.out_dir.join(rel)
    }

    fn held_out_dir(&self) -> PathBuf {
        self.cfg.data_dir.join("held_out")
    }

    fn record_path(&self, stage: Stage) -> PathBuf {
        self.out("stages").join(format!("{}.json", stage.name()))
    }

    fn input_hash(&self, stage: Stage) -> Result<String, PipelineError> {
        let cfg = self.cfg;
        let mut h = InputHash::new(stage, &self.model_id);
        h.json(&cfg.seed)?;
        match stage {
            Stage::GenDemos => h.json(&cfg.objects)?,
            Stage::Retarget => {
                require_dir(&cfg.data_dir, "generate or copy demonstrations first")?;
                h.json(&cfg.retarget)?;
                h.files(&cfg.data_dir)?;
            }
            Stage::Train => {
                let dir = self.out("retargeted/train");
                require_dir(&dir, "run the retarget stage first")?;
                h.json(&cfg.train)?;
                h.files(&dir)?;
            }
            Stage::Sample => {
                let ck = self.out("checkpoint");
                require_dir(&ck, "run the train stage first")?;
                h.json(&cfg.sample)?;
                h.files(&ck)?;
                h.files(&self.out("retargeted/train"))?;
            }
            Stage::PlanRrt | Stage::PlanCem => {
                let dir = self.out("retargeted/held_out");
                require_dir(&dir, "run the retarget stage first")?;
                if stage == Stage::PlanRrt {
                    h.json(&cfg.rrt)?;
                    h.json(&cfg.metric_frames)?;
                } else {
                    h.json(&cfg.cem)?;
                }
                h.files(&dir)?;
            }
            Stage::Evaluate => {
                let dir = self.out("trajectories");
                require_dir(&dir, "run a sampling or planning stage first")?;
                h.json(&cfg.proxy)?;
                h.files(&dir)?;
            }
            Stage::Report => {
                let dir = self.out("trajectories");
                require_dir(&dir, "run a sampling or planning stage first")?;
                h.json(&cfg.metric_frames)?;
                h.json(&cfg.plot_data)?;
                h.files(&dir)?;
                let eval = self.out("evaluation");
                if eval.is_dir() {
                    h.files(&eval)?;
                }
            }
        }
        Ok(h.finish())
    }

    fn up_to_date(&self, stage: Stage, input_hash: &str) -> bool {
        let Ok(rec) = read_json::<StageRecord>(&self.record_path(stage)) else {
            return false;
        };
        rec.input_hash == input_hash
            && rec
                .outputs
                .iter()
                .all(|(p, sha)| sha_file(Path::new(p)).is_ok_and(|s| &s == sha))
    }

    fn previous_outputs(&self, stage: Stage) -> Vec<PathBuf> {
        read_json::<StageRecord>(&self.record_path(stage))
            .map(|r| r.outputs.into_keys().map(PathBuf::from).collect())
            .unwrap_or_default()
    }

    fn run(&self, stage: Stage) -> Result<Vec<PathBuf>, PipelineError> {
        match stage {
            Stage::GenDemos => self.gen_demos(),
            Stage::Retarget => self.retarget(),
            Stage::Train => self.train(),
            Stage::Sample => self.sample(),
            Stage::PlanRrt => self.plan_rrt(),
            Stage::PlanCem => self.plan_cem(),
            Stage::Evaluate => self.evaluate(),
            Stage::Report => self.report(),
        }
    }

    fn gen_demos(&self) -> Result<Vec<PathBuf>, PipelineError> {
        for old in self.previous_outputs(Stage::GenDemos) {
            if old.is_file() {
                std::fs::remove_file(old)?;
            }
        }
        let held = self.held_out_dir();
        std::fs::create_dir_all(&held)?;
        let mut written = Vec::new();
        for (k, entry) in self.cfg.objects.iter().enumerate() {
            let mut spec = entry.spec.clone();
            spec.seed = derive_seed(self.cfg.seed, "demos", k as u64);
            let demos = generate_synthetic_demos(&self.model, &spec, entry.train + entry.held_out)?;
            for (i, d) in demos.iter().enumerate() {
                let dir = if i < entry.train { &self.cfg.data_dir } else { &held };
                let path = dir.join(format!("{}.json", d.id));
                d.save(&path)?;
                written.push(path);
            }
        }
        Ok(written)
    }

    fn retarget(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let mut written = Vec::new();
        for (src, dst) in [
            (self.cfg.data_dir.clone(), self.out("retargeted/train")),
            (self.held_out_dir(), self.out("retargeted/held_out")),
        ] {
            fresh_dir(&dst)?;
            if !src.is_dir() {
                continue;
            }
            for mut demo in load_dir(&src)? {
                if demo.joints.is_none() {
                    let human = demo.human_keypoints.as_ref().ok_or_else(|| {
                        PipelineError::Validation(format!("demonstration `{}` has neither joints nor keypoints", demo.id))
                    })?;
                    let traj = HumanTrajectory {
                        source_id: demo.id.clone(),
                        frames: demo
                            .times
                            .iter()
                            .zip(human)
                            .map(|(t, kp)| HumanFrame {
                                time: *t,
                                keypoints: kp.clone(),
                            })
                            .collect(),
                    };
                    demo.joints = Some(retarget_trajectory(&self.model, &traj, &self.cfg.retarget)?);
                }
                let path = dst.join(format!("{}.json", demo.id));
                demo.save(&path)?;
                written.push(path);
            }
        }
        Ok(written)
    }

    fn train(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let demos = load_dir(&self.out("retargeted/train"))?;
        if demos.is_empty() {
            return Err(PipelineError::Validation("no training demonstrations".into()));
        }
        let dir = self.out("checkpoint");
        fresh_dir(&dir)?;
        let mut tc = self.cfg.train.clone();
        tc.seed = derive_seed(self.cfg.seed, "train", 0);
        let outcome = train(&self.model, &demos, &tc, Some(&dir))?;
        let history = dir.join("history.json");
        write_json(&history, &outcome.history)?;
        Ok(list_files(&dir)?.into_iter().map(|(_, p)| p).collect())
    }

    fn sample(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let ck = Checkpoint::load(&self.out("checkpoint/final.ckpt")).map_err(crate::cgf::CgfError::from)?;
        let params = CgfParams::from_checkpoint(&ck)?;
        let demos = load_dir(&self.out("retargeted/train"))?;
        let dir = self.out("trajectories/cgf");
        fresh_dir(&dir)?;
        let mut written = Vec::new();
        for (k, (object, cloud)) in object_clouds(&demos).into_iter().enumerate() {
            let rows: Vec<Vec<f64>> = cloud.iter().map(|p| p.to_vec()).collect();
            let tensor = Tensor::from_rows(&rows).map_err(crate::cgf::CgfError::from)?;
            let seed = derive_seed(self.cfg.seed, "sample", k as u64);
            let mut bundle = TrajectoryBundle::new("cgf", &object, cloud);
            bundle.trajectories = sample_trajectories(
                &params,
                &tensor,
                self.cfg.sample.codes_per_object,
                &phase_grid(self.cfg.sample.frames),
                seed,
            )?;
            for (i, t) in bundle.trajectories.iter_mut().enumerate() {
                t.id = format!("cgf-{object}-{i:04}");
            }
            let path = dir.join(format!("{object}.json"));
            write_json(&path, &bundle)?;
            written.push(path);
        }
        Ok(written)
    }

    /// Held-out demonstrations grouped by object, sorted by id.
    fn problems(&self) -> Result<Vec<(String, Vec<[f64; 3]>, Vec<Demonstration>)>, PipelineError> {
        let demos = load_dir(&self.out("retargeted/held_out"))?;
        let mut groups: BTreeMap<String, (Vec<[f64; 3]>, Vec<Demonstration>)> = BTreeMap::new();
        for d in demos {
            groups.entry(d.object.clone()).or_insert_with(|| (d.cloud.clone(), Vec::new())).1.push(d);
        }
        Ok(groups.into_iter().map(|(o, (c, mut d))| {
            d.sort_by(|a, b| a.id.cmp(&b.id));
            (o, c, d)
        }).collect())
    }

    /// Plan `p` of `total` goes to object group `p % groups` and uses that
    /// group's held-out demonstrations in turn.
    fn assignments(groups: usize, total: usize) -> Vec<Vec<usize>> {
        let mut per = vec![Vec::new(); groups];
        if groups == 0 {
            return per;
        }
        for p in 0..total {
            per[p % groups].push(p);
        }
        per
    }

    fn plan_rrt(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let groups = self.problems()?;
        let rrt_dir = self.out("trajectories/rrt");
        let lin_dir = self.out("trajectories/linear");
        fresh_dir(&rrt_dir)?;
        fresh_dir(&lin_dir)?;
        let mut written = Vec::new();
        for ((object, cloud, demos), plans) in groups.iter().zip(Self::assignments(groups.len(), self.cfg.rrt.plans)) {
            if demos.is_empty() {
                continue;
            }
            let points: Vec<Vector3<f64>> = cloud.iter().map(|p| Vector3::from(*p)).collect();
            let mut rrt = TrajectoryBundle::new("rrt", object, cloud.clone());
            let mut linear = TrajectoryBundle::new("linear", object, cloud.clone());
            for (n, p) in plans.iter().enumerate() {
                let demo = &demos[n % demos.len()];
                let joints = demo.joints.as_ref().expect("retargeted demos have joints");
                let (start, goal) = (&joints[0], &joints[joints.len() - 1]);
                let radii = self.goal_radii(goal, &points)?;
                let mut cfg = self.cfg.rrt.config.clone();
                cfg.seed = derive_seed(self.cfg.seed, "rrt", *p as u64);
                let mut predicate_error = None;
                let mut predicate = |q: &[f64]| match collision_sphere_check(&self.model, q, &points, &radii) {
                    Ok(hit) => hit,
                    Err(e) => {
                        predicate_error.get_or_insert(e);
                        true
                    }
                };
                match rrt_plan(&self.model, start, goal, &mut predicate, &cfg, &mut rrt.meter) {
                    Ok(plan) => {
                        let mut t = plan.trajectory;
                        t.id = format!("rrt-{object}-{p:03}");
                        rrt.trajectories.push(t);
                    }
                    Err(e @ (PlanError::Exhausted { .. } | PlanError::Input(_))) => {
                        warn!("rrt plan {p} on {object} failed: {e}");
                        rrt.failures += 1;
                    }
                    Err(e) => return Err(e.into()),
                }
                if let Some(e) = predicate_error {
                    return Err(e.into());
                }
                let frames = (0..self.cfg.metric_frames)
                    .map(|k| {
                        let s = k as f64 / (self.cfg.metric_frames - 1) as f64;
                        start.iter().zip(goal).map(|(a, b)| a + s * (b - a)).collect()
                    })
                    .collect();
                let t = Trajectory::new(
                    format!("linear-{object}-{p:03}"),
                    "linear",
                    ConfigForm::Actuator,
                    phase_grid(self.cfg.metric_frames),
                    frames,
                );
                linear.trajectories.push(t);
            }
            info!(
                "rrt on {object}: {} plans, {} failures, {} collision checks",
                plans.len(),
                rrt.failures,
                rrt.meter.collision_checks()
            );
            for (dir, b) in [(&rrt_dir, &rrt), (&lin_dir, &linear)] {
                let path = dir.join(format!("{object}.json"));
                write_json(&path, b)?;
                written.push(path);
            }
        }
        Ok(written)
    }

    /// Link sphere radii for one plan: the configured radius, shrunk to half
    /// of each keypoint's clearance at the grasp so that the goal is free.
    fn goal_radii(&self, goal: &[f64], points: &[Vector3<f64>]) -> Result<Vec<f64>, PipelineError> {
        let keypoints = fk_actuator(&self.model, goal)?;
        Ok(default_sphere_radii(&self.model)
            .into_iter()
            .zip(keypoints)
            .map(|(r, k)| {
                if r == 0.0 {
                    return 0.0;
                }
                let clearance = points.iter().map(|p| (p - k).norm()).fold(f64::INFINITY, f64::min);
                self.cfg.rrt.link_radius.min(clearance / 2.0)
            })
            .collect())
    }

    fn plan_cem(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let groups = self.problems()?;
        let dir = self.out("trajectories/cem");
        fresh_dir(&dir)?;
        let dynamics_model = DynamicsModel::from_hand(&self.model)?;
        let gains = PdGains::inertia_scaled(&dynamics_model, &self.model.mid_config(), self.cfg.cem.bandwidth)?;
        let sim = CemDynamics {
            model: &dynamics_model,
            controller: Controller::AugmentedPd(gains),
            rollout: RolloutConfig::default(),
        };
        let mut written = Vec::new();
        for ((object, cloud, demos), plans) in groups.iter().zip(Self::assignments(groups.len(), self.cfg.cem.plans)) {
            if demos.is_empty() {
                continue;
            }
            let cost = GraspCost {
                hand: self.model.clone(),
                cloud: cloud.iter().map(|p| Vector3::from(*p)).collect(),
                contact_threshold: self.cfg.proxy.contact_threshold,
                bonus: self.cfg.cem.contact_bonus,
            };
            let mut bundle = TrajectoryBundle::new("cem", object, cloud.clone());
            for (n, p) in plans.iter().enumerate() {
                let demo = &demos[n % demos.len()];
                let joints = demo.joints.as_ref().expect("retargeted demos have joints");
                let start = SimState {
                    q: joints[0].clone(),
                    qd: vec![0.0; self.model.dof()],
                };
                let mut cfg = self.cfg.cem.config.clone();
                cfg.seed = derive_seed(self.cfg.seed, "cem", *p as u64);
                match cem_mpc_plan(&sim, &cost, &start, &joints[joints.len() - 1], &cfg, &mut bundle.meter) {
                    Ok(plan) => {
                        let mut t = plan.trajectory;
                        t.id = format!("cem-{object}-{p:03}");
                        bundle.trajectories.push(t);
                    }
                    Err(PlanError::Dynamics(e)) => {
                        warn!("cem plan {p} on {object} failed: {e}");
                        bundle.failures += 1;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            info!("cem on {object}: {} plans, {} env steps", plans.len(), bundle.meter.env_steps());
            let path = dir.join(format!("{object}.json"));
            write_json(&path, &bundle)?;
            written.push(path);
        }
        Ok(written)
    }

    fn bundles(&self) -> Result<Vec<TrajectoryBundle>, PipelineError> {
        let mut out = Vec::new();
        for (rel, path) in list_files(&self.out("trajectories"))? {
            if rel.ends_with(".json") {
                out.push(TrajectoryBundle::load(&path)?);
            }
        }
        out.sort_by(|a, b| (&a.method, &a.object).cmp(&(&b.method, &b.object)));
        Ok(out)
    }

    fn evaluate(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let dir = self.out("evaluation");
        fresh_dir(&dir)?;
        let mut written = Vec::new();
        let mut tasks: BTreeMap<String, LiftTask> = BTreeMap::new();
        for bundle in self.bundles()? {
            if bundle.method == "linear" {
                continue;
            }
            if !tasks.contains_key(&bundle.object) {
                let task = LiftTask::new(&bundle.object, bundle.cloud.clone(), OriginDoc::default(), self.cfg.proxy.clone())?;
                tasks.insert(bundle.object.clone(), task);
            }
            let task = &tasks[&bundle.object];
            let mut meter = bundle.meter;
            let batch = if bundle.trajectories.is_empty() {
                None
            } else {
                Some(batch_filter(&self.model, task, &bundle.trajectories, &mut meter)?.1)
            };
            info!(
                "{} on {}: {}/{} successes",
                bundle.method,
                bundle.object,
                meter.successes(),
                bundle.trajectories.len() + bundle.failures
            );
            let record = EvaluationRecord {
                method: bundle.method.clone(),
                object: bundle.object.clone(),
                meter,
                planning_failures: bundle.failures,
                batch,
            };
            let path = dir.join(&bundle.method).join(format!("{}.json", bundle.object));
            write_json(&path, &record)?;
            written.push(path);
        }
        Ok(written)
    }

    fn report(&self) -> Result<Vec<PathBuf>, PipelineError> {
        let dir = self.out("reports");
        fresh_dir(&dir)?;
        let bundles = self.bundles()?;
        let mut evaluations: BTreeMap<(String, String), EvaluationRecord> = BTreeMap::new();
        let eval_dir = self.out("evaluation");
        if eval_dir.is_dir() {
            for (_, path) in list_files(&eval_dir)? {
                let r: EvaluationRecord = read_json(&path)?;
                evaluations.insert((r.method.clone(), r.object.clone()), r);
            }
        }
        let mut results = Vec::new();
        let mut pooled: BTreeMap<String, MethodResults> = BTreeMap::new();
        let mut plot_entries = Vec::new();
        for b in &bundles {
            let mut reports = Vec::with_capacity(b.trajectories.len());
            for t in &b.trajectories {
                let r = t.resampled(self.cfg.metric_frames)?;
                reports.push(smoothness(&r, &self.model)?);
                if self.cfg.plot_data && plot_entries.len() < 4 * bundles.len() {
                    plot_entries.push((b.method.clone(), r));
                }
            }
            let meter = evaluations.get(&(b.method.clone(), b.object.clone())).map(|e| e.meter);
            let all = pooled.entry(b.method.clone()).or_insert_with(|| MethodResults {
                method: b.method.clone(),
                object: "all".into(),
                reports: Vec::new(),
                meter: None,
            });
            all.reports.extend(reports.iter().cloned());
            if let Some(m) = meter {
                all.meter.get_or_insert_with(CostMeter::new).absorb(&m);
            }
            results.push(MethodResults {
                method: b.method.clone(),
                object: b.object.clone(),
                reports,
                meter,
            });
        }
        results.extend(pooled.into_values());
        let table: ComparisonTable = compare_methods(&results)?;
        let mut written = Vec::new();
        let mut put = |name: &str, text: String| -> Result<(), PipelineError> {
            let p = dir.join(name);
            std::fs::write(&p, text)?;
            written.push(p);
            Ok(())
        };
        put("smoothness.csv", table.smoothness_csv())?;
        put("cost.csv", table.cost_csv())?;
        #[derive(Serialize)]
        struct Summary<'a> {
            table: &'a ComparisonTable,
            evaluations: Vec<&'a EvaluationRecord>,
        }
        put(
            "report.json",
            serde_json::to_string_pretty(&Summary {
                table: &table,
                evaluations: evaluations.values().collect(),
            })?,
        )?;
        if self.cfg.plot_data {
            let entries: Vec<(&str, &Trajectory)> = plot_entries.iter().map(|(m, t)| (m.as_str(), t)).collect();
            put("plot_data.csv", plot_data_csv(&entries)?)?;
        }
        Ok(written)
    }
}

/// First cloud of each object label, in label order.
fn object_clouds(demos: &[Demonstration]) -> Vec<(String, Vec<[f64; 3]>)> {
    let mut m: BTreeMap<String, Vec<[f64; 3]>> = BTreeMap::new();
    for d in demos {
        m.entry(d.object.clone()).or_insert_with(|| d.cloud.clone());
    }
    m.into_iter().collect()
}

fn load_model(cfg: &PipelineConfig) -> Result<(HandModel, String), PipelineError> {
    match &cfg.model {
        Some(p) => {
            let model = HandModel::load(p).map_err(|e| PipelineError::Validation(format!("{}: {e}", p.display())))?;
            Ok((model, sha_file(p)?))
        }
        None => Ok((HandModel::toy_allegro(), "builtin:toy-allegro".into())),
    }
}

/// Runs the enabled stages in order. A stage whose inputs and outputs are
/// unchanged since its last run is skipped.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport, PipelineError> {
    cfg.validate()?;
    let mut report = PipelineReport {
        stages: Vec::new(),
        report_files: Vec::new(),
    };
    if Stage::ALL.iter().all(|s| !cfg.stages.enabled(*s)) {
        report.stages = Stage::ALL
            .iter()
            .map(|s| StageStatus {
                stage: *s,
                status: StageRun::Disabled,
            })
            .collect();
        return Ok(report);
    }
    let (model, model_id) = load_model(cfg)?;
    let ctx = Context { cfg, model, model_id };
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::create_dir_all(&cfg.data_dir)?;
    for stage in Stage::ALL {
        if !cfg.stages.enabled(stage) {
            report.stages.push(StageStatus {
                stage,
                status: StageRun::Disabled,
            });
            continue;
        }
        let input_hash = ctx.input_hash(stage)?;
        let status = if ctx.up_to_date(stage, &input_hash) {
            info!("stage {} is up to date", stage.name());
            StageRun::Skipped
        } else {
            info!("running stage {}", stage.name());
            let outputs = ctx.run(stage).map_err(|e| match e {
                PipelineError::Validation(m) => PipelineError::Validation(m),
                other => PipelineError::Stage {
                    stage: stage.name().into(),
                    message: other.to_string(),
                },
            })?;
            let mut record = StageRecord {
                format: RECORD_FORMAT.into(),
                version: RECORD_VERSION,
                input_hash,
                outputs: BTreeMap::new(),
            };
            for p in outputs {
                let sha = sha_file(&p)?;
                record.outputs.insert(p.to_string_lossy().into_owned(), sha);
            }
            write_json(&ctx.record_path(stage), &record)?;
            StageRun::Ran
        };
        report.stages.push(StageStatus { stage, status });
    }
    let reports = cfg.out_dir.join("reports");
    if reports.is_dir() {
        report.report_files = list_files(&reports)?.into_iter().map(|(rel, _)| format!("reports/{rel}")).collect();
    }
    Ok(report)
}
