//! Synthetic grasp demonstrations on primitive objects.
//!
//! The object sits where the resting hand would hold it, between the
//! thumb and the other fingertips. Each demonstration jitters the wrist
//! pose, closes the fingers onto the surface by fingertip inverse
//! kinematics, and plays an approach that starts with the hand backed off
//! along its palm normal, raised on an arc and open.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::demo::Demonstration;
use crate::kinematics::model::ROOT_DOF;
use crate::kinematics::{fk_actuator, flatten_keypoints, HandModel, JointConfig};
use crate::retarget::{Problem, RetargetConfig};
use crate::shapes::Shape;

/// Surface samples per object cloud.
pub const CLOUD_POINTS: usize = 2000;
/// Fingertips must end within this distance of the cloud.
pub const CONTACT_TOLERANCE: f64 = 0.0025;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticDemoSpec {
    pub object: Shape,
    /// Wrist back-off along the palm normal at the first frame, meters.
    pub approach_distance: f64,
    /// Peak height of the approach arc, meters.
    pub arc_height: f64,
    /// Fraction of the way from the grasp toward straight fingers at the
    /// first frame.
    pub opening: f64,
    /// Fingers follow the wrist progress raised to this power, so values
    /// above 1 close them late.
    pub closure_power: f64,
    pub frames: usize,
    /// Seconds from first to last frame.
    pub duration: f64,
    /// Standard deviation of joint noise on interior frames.
    pub noise: f64,
    /// Uniform wrist rotation jitter per axis, radians.
    pub rotation_jitter: f64,
    /// Uniform wrist translation jitter per axis, meters.
    pub translation_jitter: f64,
    pub points: usize,
    pub seed: u64,
}

impl Default for SyntheticDemoSpec {
    fn default() -> Self {
        Self {
            object: Shape::Sphere { radius: 0.03 },
            approach_distance: 0.08,
            arc_height: 0.03,
            opening: 1.0,
            closure_power: 2.0,
            frames: 30,
            duration: 1.0,
            noise: 0.0,
            rotation_jitter: 0.15,
            translation_jitter: 0.004,
            points: CLOUD_POINTS,
            seed: 0,
        }
    }
}

impl SyntheticDemoSpec {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.object.validate().map_err(PipelineError::Validation)?;
        let fail = |m: &str| Err(PipelineError::Validation(format!("synthetic demo spec: {m}")));
        if self.frames < 4 {
            return fail("frame count must be at least 4");
        }
        if !(self.noise >= 0.0) {
            return fail("noise must be non-negative");
        }
        if self.points == 0 {
            return fail("points must be positive");
        }
        let lengths = [
            self.approach_distance,
            self.arc_height,
            self.rotation_jitter,
            self.translation_jitter,
        ];
        if lengths.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return fail("approach, arc and jitter must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.opening) || !(self.closure_power > 0.0) || !(self.duration > 0.0) {
            return fail("opening must lie in [0, 1]; closure power and duration must be positive");
        }
        Ok(())
    }

    /// Object label, e.g. `sphere-0.030`.
    pub fn object_label(&self) -> String {
        match self.object {
            Shape::Sphere { radius } => format!("sphere-{radius:.3}"),
            Shape::Box { half_extents: h } => format!("box-{:.3}x{:.3}x{:.3}", 2.0 * h[0], 2.0 * h[1], 2.0 * h[2]),
            Shape::Cylinder { radius, half_height } => format!("cylinder-{radius:.3}x{:.3}", 2.0 * half_height),
        }
    }
}

/// Area-weighted surface samples of `shape` in its own frame.
pub fn sample_mesh_points(shape: &Shape, n: usize, seed: u64) -> Vec<[f64; 3]> {
    shape.sample_surface(n, seed)
}

/// Object center: midway between the thumb tip and the mean of the other
/// fingertips of the resting hand.
pub fn object_center(model: &HandModel) -> Result<Vector3<f64>, PipelineError> {
    let kp = fk_actuator(model, &model.mid_config())?;
    let tips = model.fingertip_indices();
    let thumb = kp[*tips.last().expect("hand has fingertips")];
    let others = &tips[..tips.len() - 1];
    let mean = others.iter().map(|i| kp[*i]).sum::<Vector3<f64>>() / others.len() as f64;
    Ok(0.5 * (thumb + mean))
}

fn min_jerk(s: f64) -> f64 {
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

fn nearest_point(cloud: &[Vector3<f64>], p: &Vector3<f64>) -> (Vector3<f64>, f64) {
    cloud
        .iter()
        .map(|c| (*c, (c - p).norm()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("cloud is non-empty")
}

/// Closes the fingers of `q` onto the object with the wrist held fixed.
fn close_fingers(
    model: &HandModel,
    q: &[f64],
    shape: &Shape,
    center: &Vector3<f64>,
    cloud: &[Vector3<f64>],
) -> Result<Vec<f64>, PipelineError> {
    let tips = model.fingertip_indices();
    let mut weights = vec![0.0; model.num_keypoints()];
    for t in &tips {
        weights[*t] = 1.0;
    }
    let mut lower = model.lower.clone();
    let mut upper = model.upper.clone();
    lower[..ROOT_DOF].copy_from_slice(&q[..ROOT_DOF]);
    upper[..ROOT_DOF].copy_from_slice(&q[..ROOT_DOF]);
    let pinned = (lower.clone(), upper.clone());
    let cfg = RetargetConfig {
        lambda_smooth: 0.0,
        max_iters: 100,
        tol: 1e-12,
        ..RetargetConfig::default()
    };
    let mut q = q.to_vec();
    for round in 0..10 {
        // the wrist is released for the last rounds when a fingertip
        // cannot reach on its own
        let free = round >= 5 && tip_gap(model, &q, &tips, cloud)? > CONTACT_TOLERANCE;
        if free {
            lower[..ROOT_DOF].copy_from_slice(&model.lower[..ROOT_DOF]);
            upper[..ROOT_DOF].copy_from_slice(&model.upper[..ROOT_DOF]);
        } else {
            (lower, upper) = pinned.clone();
            lower[..ROOT_DOF].copy_from_slice(&q[..ROOT_DOF]);
            upper[..ROOT_DOF].copy_from_slice(&q[..ROOT_DOF]);
        }
        let kp = fk_actuator(model, &q)?;
        let mut targets = kp.clone();
        for t in &tips {
            targets[*t] = if round < 8 {
                project_to_surface(shape, &(kp[*t] - center)) + center
            } else {
                nearest_point(cloud, &kp[*t]).0
            };
        }
        let flat = flatten_keypoints(&targets);
        let problem = Problem {
            model,
            targets: flat.clone(),
            prev_keypoints: flat,
            weights: weights.clone(),
            lambda: 0.0,
            lower: lower.clone(),
            upper: upper.clone(),
        };
        q = problem.solve(&q, &cfg)?.q;
    }
    Ok(q)
}

fn tip_gap(model: &HandModel, q: &[f64], tips: &[usize], cloud: &[Vector3<f64>]) -> Result<f64, PipelineError> {
    let kp = fk_actuator(model, q)?;
    Ok(tips.iter().map(|t| nearest_point(cloud, &kp[*t]).1).fold(0.0, f64::max))
}

fn project_to_surface(shape: &Shape, p: &Vector3<f64>) -> Vector3<f64> {
    match shape {
        Shape::Sphere { radius } => p.normalize() * *radius,
        Shape::Box { half_extents } => {
            let h = Vector3::from(*half_extents);
            let clamped = p.zip_map(&h, |v, e| v.clamp(-e, e));
            if clamped != *p {
                return clamped;
            }
            // inside: push out through the nearest face
            let n = shape.normal_at(p);
            let a = n.iamax();
            let mut out = *p;
            out[a] = n[a] * h[a];
            out
        }
        Shape::Cylinder { radius, half_height } => {
            let radial = p.xy();
            let r = radial.norm();
            let z = p.z.clamp(-half_height, *half_height);
            let outside = r > *radius || p.z.abs() > *half_height;
            if outside {
                let s = if r > *radius { radius / r } else { 1.0 };
                return Vector3::new(p.x * s, p.y * s, z);
            }
            if radius - r < half_height - p.z.abs() {
                let s = radius / r.max(1e-12);
                Vector3::new(p.x * s, p.y * s, p.z)
            } else {
                Vector3::new(p.x, p.y, half_height * p.z.signum())
            }
        }
    }
}

/// `count` demonstrations for one object. Demonstrations of one spec
/// share the object cloud; the `i`-th uses random stream `i` of the seed.
pub fn generate_synthetic_demos(
    model: &HandModel,
    spec: &SyntheticDemoSpec,
    count: usize,
) -> Result<Vec<Demonstration>, PipelineError> {
    spec.validate()?;
    model.validate_hand()?;
    if count == 0 {
        return Ok(Vec::new());
    }
    let center = object_center(model)?;
    let local = sample_mesh_points(&spec.object, spec.points, spec.seed);
    let cloud: Vec<[f64; 3]> = local.iter().map(|p| [p[0] + center.x, p[1] + center.y, p[2] + center.z]).collect();
    let cloud_v: Vec<Vector3<f64>> = cloud.iter().map(|p| Vector3::from(*p)).collect();
    let label = spec.object_label();
    let tips = model.fingertip_indices();
    let n = model.dof();

    let mut demos = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64 + 1);
        let mut grasp = model.mid_config();
        for v in &mut grasp[..3] {
            *v += rng.gen_range(-1.0..=1.0) * spec.translation_jitter;
        }
        for v in &mut grasp[3..ROOT_DOF] {
            *v += rng.gen_range(-1.0..=1.0) * spec.rotation_jitter;
        }
        let grasp = close_fingers(model, &grasp, &spec.object, &center, &cloud_v)?;
        let worst = tip_gap(model, &grasp, &tips, &cloud_v)?;
        if worst > CONTACT_TOLERANCE {
            return Err(PipelineError::Validation(format!(
                "object {label} cannot be grasped by the hand: fingertip stays {:.1} mm from the surface",
                worst * 1e3
            )));
        }

        // open hand, backed off along the palm normal (+x of the wrist)
        let pose = JointConfig::from_actuator(&grasp)?.root_transform()?;
        let back = pose.rotation * Vector3::new(-spec.approach_distance, 0.0, 0.0);
        let mut open = grasp.clone();
        for j in ROOT_DOF..n {
            open[j] = (grasp[j] * (1.0 - spec.opening)).clamp(model.lower[j], model.upper[j]);
        }
        let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid deviation");
        let mut frames = Vec::with_capacity(spec.frames);
        for k in 0..spec.frames {
            let s = k as f64 / (spec.frames - 1) as f64;
            let m = min_jerk(s);
            let f = m.powf(spec.closure_power);
            let mut q = grasp.clone();
            for a in 0..3 {
                q[a] = grasp[a] + (1.0 - m) * back[a];
            }
            q[2] += spec.arc_height * (std::f64::consts::PI * m).sin();
            for j in ROOT_DOF..n {
                q[j] = open[j] + f * (grasp[j] - open[j]);
            }
            if spec.noise > 0.0 && k > 0 && k + 1 < spec.frames {
                for v in q.iter_mut() {
                    *v += noise.sample(&mut rng);
                }
                model.clamp(&mut q);
            }
            frames.push(q);
        }
        let times = (0..spec.frames).map(|k| spec.duration * k as f64 / (spec.frames - 1) as f64).collect();
        let mut demo = Demonstration::new(format!("{label}-{}-{i:03}", spec.seed), label.clone(), cloud.clone(), times);
        demo.human_keypoints = Some(
            frames
                .iter()
                .map(|q| fk_actuator(model, q).map(|kp| kp.iter().map(|p| [p.x, p.y, p.z]).collect()))
                .collect::<Result<_, _>>()?,
        );
        demo.joints = Some(frames);
        demo.validate()?;
        demos.push(demo);
    }
    Ok(demos)
}
