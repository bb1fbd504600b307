//! Position-based retargeting of human keypoints onto the robot hand.
//!
//! Each frame minimizes
//! `Σᵢ ‖Jᵢ(q) − jᵢ‖² + λ ‖Jᵢ(q) − Jᵢ(q_prev)‖²` subject to the joint box,
//! using projected damped Gauss-Newton with an Armijo backtracking search.
//! Frames are solved in order, each warm-started from the previous one.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::kinematics::{fk_actuator, fk_jacobian_actuator, flatten_keypoints, HandModel, KinematicsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    GaussNewton,
    ProjectedGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetargetConfig {
    pub lambda_smooth: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub solver: Solver,
}

impl Default for RetargetConfig {
    fn default() -> Self {
        Self {
            lambda_smooth: 1e-2,
            max_iters: 200,
            tol: 1e-8,
            solver: Solver::GaussNewton,
        }
    }
}

impl RetargetConfig {
    pub fn validate(&self) -> Result<(), RetargetError> {
        if !(self.lambda_smooth >= 0.0) || !self.lambda_smooth.is_finite() {
            return Err(RetargetError::Config("lambda_smooth must be >= 0".into()));
        }
        if self.max_iters < 1 {
            return Err(RetargetError::Config("max_iters must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(RetargetError::Config("tol must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanFrame {
    pub time: f64,
    pub keypoints: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanTrajectory {
    pub source_id: String,
    pub frames: Vec<HumanFrame>,
}

impl HumanTrajectory {
    pub fn validate(&self, keypoint_count: usize) -> Result<(), RetargetError> {
        for (i, f) in self.frames.iter().enumerate() {
            if f.keypoints.len() != keypoint_count {
                return Err(RetargetError::Input(format!(
                    "frame {i} has {} keypoints, expected {keypoint_count}",
                    f.keypoints.len()
                )));
            }
            if !f.time.is_finite() || f.keypoints.iter().flatten().any(|v| !v.is_finite()) {
                return Err(RetargetError::Input(format!("frame {i} has non-finite values")));
            }
            if i > 0 && f.time <= self.frames[i - 1].time {
                return Err(RetargetError::Input(format!(
                    "timestamps must be strictly increasing (frame {i})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RetargetError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("invalid retarget config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("solver diverged after {iterations} iterations (objective {objective})")]
    Diverged {
        iterations: usize,
        objective: f64,
        last_iterate: Vec<f64>,
    },
    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<RetargetError>,
    },
}

/// Solution of one frame with the objective after every accepted iterate
/// (entry 0 is the starting point).
#[derive(Debug, Clone)]
pub struct FrameSolution {
    pub q: Vec<f64>,
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

impl FrameSolution {
    pub fn objective(&self) -> f64 {
        *self.objective_history.last().expect("history is never empty")
    }
}

/// Objective setup shared by the solvers. Per-keypoint weights allow
/// fingertip-only targets (used by the synthetic grasp generator).
pub(crate) struct Problem<'a> {
    pub model: &'a HandModel,
    pub targets: Vec<f64>,
    pub prev_keypoints: Vec<f64>,
    pub weights: Vec<f64>,
    pub lambda: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Problem<'_> {
    fn weight(&self, row: usize) -> f64 {
        self.weights[row / 3]
    }

    pub fn objective(&self, q: &[f64]) -> Result<f64, KinematicsError> {
        let kp = flatten_keypoints(&fk_actuator(self.model, q)?);
        let mut f = 0.0;
        for r in 0..kp.len() {
            let w = self.weight(r);
            let a = kp[r] - self.targets[r];
            let b = kp[r] - self.prev_keypoints[r];
            f += w * (a * a + self.lambda * b * b);
        }
        Ok(f)
    }

    /// Gradient and Gauss-Newton matrix at `q`.
    fn linearize(&self, q: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>), KinematicsError> {
        let kp = flatten_keypoints(&fk_actuator(self.model, q)?);
        let jac = fk_jacobian_actuator(self.model, q)?;
        let n = q.len();
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        let scale = 1.0 + self.lambda;
        let mut weighted = jac.clone();
        for r in 0..kp.len() {
            let w = self.weight(r);
            let e = (kp[r] - self.targets[r]) + self.lambda * (kp[r] - self.prev_keypoints[r]);
            for c in 0..n {
                g[c] += 2.0 * w * e * jac[(r, c)];
            }
            weighted.row_mut(r).scale_mut(w);
        }
        h.gemm_tr(2.0 * scale, &jac, &weighted, 0.0);
        Ok((g, h))
    }

    fn project(&self, q: &mut [f64]) {
        for ((v, l), u) in q.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }

    /// Variables pinned at a bound with the gradient pushing outward.
    fn active_set(&self, q: &[f64], g: &DVector<f64>) -> Vec<bool> {
        (0..q.len())
            .map(|i| (q[i] <= self.lower[i] && g[i] > 0.0) || (q[i] >= self.upper[i] && g[i] < 0.0))
            .collect()
    }

    fn projected_gradient_norm(&self, q: &[f64], g: &DVector<f64>) -> f64 {
        let mut moved = q.to_vec();
        for i in 0..q.len() {
            moved[i] -= g[i];
        }
        self.project(&mut moved);
        moved
            .iter()
            .zip(q)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    fn direction(&self, solver: Solver, q: &[f64], g: &DVector<f64>, h: &DMatrix<f64>) -> DVector<f64> {
        let n = q.len();
        let active = self.active_set(q, g);
        match solver {
            Solver::ProjectedGradient => {
                let mut d = -g.clone();
                for i in 0..n {
                    if active[i] {
                        d[i] = 0.0;
                    }
                }
                // scale the steepest-descent step by the inverse curvature along it
                let curv = (d.transpose() * h * &d)[(0, 0)];
                if curv > 0.0 {
                    d *= d.norm_squared() / curv;
                }
                d
            }
            Solver::GaussNewton => {
                let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
                let mut d = DVector::zeros(n);
                if free.is_empty() {
                    return d;
                }
                let m = free.len();
                let diag_scale = (0..n).map(|i| h[(i, i)]).fold(0.0f64, f64::max).max(1e-12);
                let damping = 1e-9 * diag_scale;
                let mut hf = DMatrix::zeros(m, m);
                let mut gf = DVector::zeros(m);
                for (a, &i) in free.iter().enumerate() {
                    gf[a] = g[i];
                    for (b, &j) in free.iter().enumerate() {
                        hf[(a, b)] = h[(i, j)];
                    }
                    hf[(a, a)] += damping;
                }
                let step = match hf.clone().cholesky() {
                    Some(ch) => ch.solve(&(-gf.clone())),
                    None => {
                        for a in 0..m {
                            hf[(a, a)] += 1e-6 * diag_scale;
                        }
                        match hf.cholesky() {
                            Some(ch) => ch.solve(&(-gf)),
                            None => -gf,
                        }
                    }
                };
                for (a, &i) in free.iter().enumerate() {
                    d[i] = step[a];
                }
                d
            }
        }
    }

    pub fn solve(&self, q_start: &[f64], cfg: &RetargetConfig) -> Result<FrameSolution, RetargetError> {
        const ARMIJO_C: f64 = 1e-4;
        const MAX_HALVINGS: usize = 40;

        let mut q = q_start.to_vec();
        self.project(&mut q);
        let mut f = self.objective(&q)?;
        let mut history = vec![f];
        let mut stalls = 0usize;
        let mut iterations = 0;

        for it in 0..cfg.max_iters {
            iterations = it + 1;
            let (g, h) = self.linearize(&q)?;
            let d = self.direction(cfg.solver, &q, &g, &h);
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let mut trial: Vec<f64> = q.iter().zip(d.iter()).map(|(a, b)| a + alpha * b).collect();
                self.project(&mut trial);
                let decrease: f64 = trial
                    .iter()
                    .zip(&q)
                    .zip(g.iter())
                    .map(|((t, c), gi)| gi * (t - c))
                    .sum();
                let ft = self.objective(&trial)?;
                if ft.is_finite() && ft <= f + ARMIJO_C * decrease && ft <= f {
                    accepted = Some((trial, ft));
                    break;
                }
                alpha *= 0.5;
            }
            match accepted {
                Some((trial, ft)) => {
                    stalls = 0;
                    let improvement = f - ft;
                    q = trial;
                    f = ft;
                    history.push(f);
                    if improvement <= cfg.tol * f.max(1.0) {
                        break;
                    }
                }
                None => {
                    // line search exhausted: fine at a stationary point,
                    // a failure anywhere else
                    if self.projected_gradient_norm(&q, &g) <= cfg.tol.sqrt() {
                        break;
                    }
                    stalls += 1;
                    if stalls >= 2 {
                        return Err(RetargetError::Diverged {
                            iterations,
                            objective: f,
                            last_iterate: q,
                        });
                    }
                }
            }
        }
        Ok(FrameSolution {
            q,
            objective_history: history,
            iterations,
        })
    }
}

fn flatten_targets(t: &[Vector3<f64>]) -> Vec<f64> {
    flatten_keypoints(t)
}

/// Solves one frame, warm-started at `q_prev`.
pub fn retarget_frame_detailed(
    model: &HandModel,
    targets: &[Vector3<f64>],
    q_prev: &[f64],
    cfg: &RetargetConfig,
) -> Result<FrameSolution, RetargetError> {
    cfg.validate()?;
    if targets.len() != model.num_keypoints() {
        return Err(KinematicsError::Dimension {
            expected: model.num_keypoints(),
            found: targets.len(),
        }
        .into());
    }
    if targets.iter().any(|t| !t.iter().all(|v| v.is_finite())) {
        return Err(RetargetError::Input("non-finite target keypoint".into()));
    }
    let prev_keypoints = flatten_keypoints(&fk_actuator(model, q_prev)?);
    let problem = Problem {
        model,
        targets: flatten_targets(targets),
        prev_keypoints,
        weights: vec![1.0; model.num_keypoints()],
        lambda: cfg.lambda_smooth,
        lower: model.lower.clone(),
        upper: model.upper.clone(),
    };
    problem.solve(q_prev, cfg)
}

pub fn retarget_frame(
    model: &HandModel,
    targets: &[Vector3<f64>],
    q_prev: &[f64],
    cfg: &RetargetConfig,
) -> Result<Vec<f64>, RetargetError> {
    Ok(retarget_frame_detailed(model, targets, q_prev, cfg)?.q)
}

/// Retargets a whole trajectory. Frame 0 uses the joint-limit midpoint as
/// its prior; every later frame uses the previous solution.
pub fn retarget_trajectory(
    model: &HandModel,
    traj: &HumanTrajectory,
    cfg: &RetargetConfig,
) -> Result<Vec<Vec<f64>>, RetargetError> {
    cfg.validate()?;
    if traj.frames.is_empty() {
        return Err(RetargetError::Input("empty trajectory".into()));
    }
    traj.validate(model.num_keypoints())?;
    let mut prev = model.mid_config();
    let mut out = Vec::with_capacity(traj.frames.len());
    for (i, frame) in traj.frames.iter().enumerate() {
        let targets: Vec<Vector3<f64>> = frame.keypoints.iter().map(|p| Vector3::from(*p)).collect();
        let q = retarget_frame(model, &targets, &prev, cfg).map_err(|e| RetargetError::Frame {
            frame: i,
            source: Box::new(e),
        })?;
        prev = q.clone();
        out.push(q);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{Joint, JointKind, Keypoint};
    use nalgebra::Isometry3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_config(model: &HandModel, rng: &mut ChaCha8Rng, shrink: f64) -> Vec<f64> {
        model
            .lower
            .iter()
            .zip(&model.upper)
            .map(|(l, u)| {
                let mid = 0.5 * (l + u);
                let half = 0.5 * (u - l) * shrink;
                rng.gen_range(mid - half..=mid + half)
            })
            .collect()
    }

    fn residual(model: &HandModel, q: &[f64], targets: &[Vector3<f64>]) -> f64 {
        fk_actuator(model, q)
            .unwrap()
            .iter()
            .zip(targets)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn optimum_at_prior_is_kept() {
        let m = HandModel::toy_allegro();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q_prev = random_config(&m, &mut rng, 0.8);
        let targets = fk_actuator(&m, &q_prev).unwrap();
        for lambda in [0.0, 1e-2, 10.0] {
            let cfg = RetargetConfig { lambda_smooth: lambda, ..Default::default() };
            let sol = retarget_frame_detailed(&m, &targets, &q_prev, &cfg).unwrap();
            assert!(sol.objective() <= sol.objective_history[0]);
            assert!(residual(&m, &sol.q, &targets) <= 1e-8);
        }
    }

    #[test]
    fn recovers_generated_targets() {
        let m = HandModel::toy_allegro();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = RetargetConfig {
            lambda_smooth: 0.0,
            tol: 1e-14,
            ..Default::default()
        };
        for _ in 0..10 {
            let q_star = random_config(&m, &mut rng, 0.6);
            let targets = fk_actuator(&m, &q_star).unwrap();
            // start from a nearby configuration
            let q0: Vec<f64> = q_star
                .iter()
                .zip(m.lower.iter().zip(&m.upper))
                .map(|(v, (l, u))| (v + rng.gen_range(-0.1..0.1) * (u - l)).clamp(*l, *u))
                .collect();
            let q = retarget_frame(&m, &targets, &q0, &cfg).unwrap();
            assert!(residual(&m, &q, &targets) <= 1e-6, "residual {}", residual(&m, &q, &targets));
        }
    }

    #[test]
    fn objective_is_monotone_and_within_limits() {
        let m = HandModel::toy_allegro();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for solver in [Solver::GaussNewton, Solver::ProjectedGradient] {
            let cfg = RetargetConfig { solver, ..Default::default() };
            for _ in 0..5 {
                let q_star = random_config(&m, &mut rng, 1.0);
                let targets: Vec<_> = fk_actuator(&m, &q_star)
                    .unwrap()
                    .iter()
                    .map(|p| p + Vector3::new(rng.gen_range(-0.02..0.02), 0.01, -0.01))
                    .collect();
                let sol = retarget_frame_detailed(&m, &targets, &m.mid_config(), &cfg).unwrap();
                for w in sol.objective_history.windows(2) {
                    assert!(w[1] <= w[0]);
                }
                assert!(m.within_limits(&sol.q));
            }
        }
    }

    fn slider() -> HandModel {
        HandModel::new(
            "slider",
            vec![Joint {
                name: "x".into(),
                kind: JointKind::Prismatic,
                axis: Vector3::x(),
                parent: None,
                origin: Isometry3::identity(),
            }],
            vec![-0.1],
            vec![0.2],
            vec![Keypoint {
                name: "p".into(),
                link: 0,
                offset: Vector3::zeros(),
                fingertip: true,
            }],
        )
        .unwrap()
    }

    #[test]
    fn unreachable_target_pins_joint_at_limit() {
        let m = slider();
        let cfg = RetargetConfig::default();
        let q = retarget_frame(&m, &[Vector3::new(5.0, 0.0, 0.0)], &[0.0], &cfg).unwrap();
        assert_eq!(q, vec![0.2]);
        let q = retarget_frame(&m, &[Vector3::new(-5.0, 0.3, 0.0)], &[0.0], &cfg).unwrap();
        assert_eq!(q, vec![-0.1]);
    }

    #[test]
    fn one_dimensional_optimum_balances_prior() {
        // (x - a)^2 + λ (x - p)^2 is minimized at (a + λ p) / (1 + λ)
        let m = slider();
        let cfg = RetargetConfig { lambda_smooth: 3.0, ..Default::default() };
        let q = retarget_frame(&m, &[Vector3::new(0.1, 0.0, 0.0)], &[0.02], &cfg).unwrap();
        let expected = (0.1 + 3.0 * 0.02) / 4.0;
        assert!((q[0] - expected).abs() < 1e-10);
    }

    fn constant_traj(targets: &[Vector3<f64>], n: usize) -> HumanTrajectory {
        HumanTrajectory {
            source_id: "const".into(),
            frames: (0..n)
                .map(|i| HumanFrame {
                    time: i as f64 * 0.1,
                    keypoints: targets.iter().map(|p| [p.x, p.y, p.z]).collect(),
                })
                .collect(),
        }
    }

    fn assert_stationary(out: &[Vec<f64>]) {
        assert_eq!(out.len(), 5);
        for q in &out[1..] {
            for (a, b) in q.iter().zip(&out[0]) {
                assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn constant_trajectory_is_stationary() {
        let m = HandModel::toy_allegro();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // without the smoothness term every frame solves the same problem
        let targets = fk_actuator(&m, &random_config(&m, &mut rng, 0.5)).unwrap();
        let cfg = RetargetConfig { lambda_smooth: 0.0, tol: 1e-14, ..Default::default() };
        assert_stationary(&retarget_trajectory(&m, &constant_traj(&targets, 5), &cfg).unwrap());
        // with it, targets that agree with the prior keep every frame at the prior
        let targets = fk_actuator(&m, &m.mid_config()).unwrap();
        let cfg = RetargetConfig { tol: 1e-14, ..Default::default() };
        assert_stationary(&retarget_trajectory(&m, &constant_traj(&targets, 5), &cfg).unwrap());
    }

    #[test]
    fn single_frame_uses_midpoint_prior() {
        let m = HandModel::toy_allegro();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let targets = fk_actuator(&m, &random_config(&m, &mut rng, 0.5)).unwrap();
        let cfg = RetargetConfig::default();
        let traj = retarget_trajectory(&m, &constant_traj(&targets, 1), &cfg).unwrap();
        let direct = retarget_frame(&m, &targets, &m.mid_config(), &cfg).unwrap();
        assert_eq!(traj[0], direct);
    }

    fn moving_traj(m: &HandModel, rng: &mut ChaCha8Rng, spread: f64) -> HumanTrajectory {
        let a = random_config(m, rng, spread);
        let b = random_config(m, rng, spread);
        HumanTrajectory {
            source_id: "moving".into(),
            frames: (0..6)
                .map(|i| {
                    let s = i as f64 / 5.0;
                    let q: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + s * (y - x)).collect();
                    HumanFrame {
                        time: i as f64,
                        keypoints: fk_actuator(m, &q).unwrap().iter().map(|p| [p.x, p.y, p.z]).collect(),
                    }
                })
                .collect(),
        }
    }

    fn displacement(out: &[Vec<f64>]) -> Vec<f64> {
        out.windows(2)
            .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .collect()
    }

    #[test]
    fn large_lambda_shrinks_frame_displacement() {
        let m = HandModel::toy_allegro();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let traj = moving_traj(&m, &mut rng, 0.5);
        let free = retarget_trajectory(&m, &traj, &RetargetConfig { lambda_smooth: 0.0, ..Default::default() }).unwrap();
        let stiff = retarget_trajectory(&m, &traj, &RetargetConfig { lambda_smooth: 1e6, ..Default::default() }).unwrap();
        for (s, f) in displacement(&stiff).iter().zip(displacement(&free)) {
            assert!(*s < f, "{s} !< {f}");
        }
    }

    /// Σ_t ‖x_t − x_{t−1}‖² with the midpoint prior as the frame before 0,
    /// measured in joint space or keypoint space.
    fn total_motion(m: &HandModel, traj: &HumanTrajectory, lambda: f64, keypoint_space: bool) -> f64 {
        let mut out = vec![m.mid_config()];
        out.extend(retarget_trajectory(m, traj, &RetargetConfig { lambda_smooth: lambda, ..Default::default() }).unwrap());
        if keypoint_space {
            out = out.iter().map(|q| flatten_keypoints(&fk_actuator(m, q).unwrap())).collect();
        }
        displacement(&out).iter().map(|d| d * d).sum()
    }

    #[test]
    fn total_motion_is_weakly_monotone_in_lambda() {
        let m = HandModel::toy_allegro();
        let lambdas = [0.0, 0.1, 1.0, 10.0, 100.0];
        for seed in 0..8 {
            // keypoint space is what the smoothness term penalizes
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let traj = moving_traj(&m, &mut rng, 0.3);
            let mut last = f64::INFINITY;
            for lambda in lambdas {
                let total = total_motion(&m, &traj, lambda, true);
                assert!(total <= last * (1.0 + 1e-6), "seed {seed} lambda {lambda}: {total} > {last}");
                last = total;
            }
            // joint space tracks it while the kinematics stay close to linear
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let traj = moving_traj(&m, &mut rng, 0.05);
            let mut last = f64::INFINITY;
            for lambda in lambdas {
                let total = total_motion(&m, &traj, lambda, false);
                assert!(total <= last * (1.0 + 1e-6), "seed {seed} lambda {lambda}: {total} > {last}");
                last = total;
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        let m = HandModel::toy_allegro();
        let cfg = RetargetConfig::default();
        let empty = HumanTrajectory { source_id: "e".into(), frames: vec![] };
        assert!(matches!(retarget_trajectory(&m, &empty, &cfg), Err(RetargetError::Input(_))));
        let mut traj = constant_traj(&fk_actuator(&m, &m.mid_config()).unwrap(), 2);
        traj.frames[1].keypoints[3][0] = f64::NAN;
        assert!(retarget_trajectory(&m, &traj, &cfg).is_err());
        let mut traj = constant_traj(&fk_actuator(&m, &m.mid_config()).unwrap(), 2);
        traj.frames[1].time = 0.0;
        assert!(retarget_trajectory(&m, &traj, &cfg).is_err());
        let bad = RetargetConfig { max_iters: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
