use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{max_norm_diff, PlanError};
use crate::eval::CostMeter;
use crate::kinematics::HandModel;
use crate::trajectory::{phase_grid, ConfigForm, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RrtConfig {
    pub max_nodes: usize,
    /// Largest joint-space step, max-norm.
    pub step_size: f64,
    /// Probability of extending toward the goal instead of a random sample.
    pub goal_bias: f64,
    pub shortcut_attempts: usize,
    pub seed: u64,
}

impl Default for RrtConfig {
    fn default() -> Self {
        Self {
            max_nodes: 10_000,
            step_size: 0.01,
            goal_bias: 0.5,
            shortcut_attempts: 100,
            seed: 0,
        }
    }
}

impl RrtConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if !(self.goal_bias > 0.0 && self.goal_bias < 1.0) {
            return Err(PlanError::Config(format!("goal_bias must lie in (0, 1), got {}", self.goal_bias)));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(PlanError::Config(format!("step_size must be positive, got {}", self.step_size)));
        }
        if self.max_nodes == 0 {
            return Err(PlanError::Config("max_nodes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RrtPlan {
    /// Waypoints no more than one step apart, start to goal.
    pub trajectory: Trajectory,
    pub nodes: usize,
    pub extensions: usize,
    /// Waypoint count of the tree path before shortcutting.
    pub raw_len: usize,
}

/// Moves from `from` toward `to` by at most `eps` in max-norm; returns `to`
/// itself once within reach.
fn steer(from: &[f64], to: &[f64], eps: f64) -> Vec<f64> {
    let d = max_norm_diff(from, to);
    if d <= eps {
        return to.to_vec();
    }
    let s = eps / d;
    from.iter().zip(to).map(|(a, b)| a + s * (b - a)).collect()
}

/// Interior points of the segment `a -> b`, spaced at most `eps` apart.
fn interpolate(a: &[f64], b: &[f64], eps: f64) -> Vec<Vec<f64>> {
    let n = (max_norm_diff(a, b) / eps).ceil().max(1.0) as usize;
    (1..n)
        .map(|k| {
            let s = k as f64 / n as f64;
            a.iter().zip(b).map(|(x, y)| x + s * (y - x)).collect()
        })
        .collect()
}

fn nearest(nodes: &[Vec<f64>], target: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, n) in nodes.iter().enumerate() {
        let d: f64 = n.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Joint-space RRT with greedy extension: each iteration picks the goal
/// (probability `goal_bias`) or a uniform sample within the limits and
/// extends the nearest node toward it step by step until blocked or
/// arrived. The tree path is shortened by seeded random shortcuts and
/// timed uniformly on the phase grid.
///
/// Every call of `collision` is charged to `meter`. Configurations are in
/// actuator form.
pub fn rrt_plan(
    model: &HandModel,
    start: &[f64],
    goal: &[f64],
    collision: &mut dyn FnMut(&[f64]) -> bool,
    cfg: &RrtConfig,
    meter: &mut CostMeter,
) -> Result<RrtPlan, PlanError> {
    cfg.validate()?;
    let n = model.dof();
    if start.len() != n || goal.len() != n {
        return Err(PlanError::Input(format!("configurations must have {n} entries")));
    }
    if !model.within_limits(goal) {
        return Err(PlanError::Input("goal is outside the joint limits".into()));
    }
    let eps = cfg.step_size;
    let mut check = |q: &[f64], meter: &mut CostMeter| {
        meter.add_collision_checks(1);
        collision(q)
    };
    if check(start, meter) {
        return Err(PlanError::Input("start configuration is in collision".into()));
    }
    let mut nodes = vec![start.to_vec()];
    let mut parents = vec![usize::MAX];
    let mut extensions = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // The goal is a grasp and may touch the object, so it is never checked.
    let mut reached = (max_norm_diff(start, goal) == 0.0).then_some(0);
    while reached.is_none() {
        if nodes.len() >= cfg.max_nodes {
            return Err(PlanError::Exhausted {
                nodes: nodes.len(),
                meter: *meter,
            });
        }
        let target: Vec<f64> = if rng.gen::<f64>() < cfg.goal_bias {
            goal.to_vec()
        } else {
            model.lower.iter().zip(&model.upper).map(|(l, u)| rng.gen_range(*l..=*u)).collect()
        };
        extensions += 1;
        let mut cur = nearest(&nodes, &target);
        while nodes.len() < cfg.max_nodes {
            let next = steer(&nodes[cur], &target, eps);
            if check(&next, meter) {
                break;
            }
            let arrived = next == target;
            let at_goal = max_norm_diff(&next, goal) <= eps;
            nodes.push(next);
            parents.push(cur);
            cur = nodes.len() - 1;
            if at_goal {
                if nodes[cur] != goal {
                    nodes.push(goal.to_vec());
                    parents.push(cur);
                    cur = nodes.len() - 1;
                }
                reached = Some(cur);
                break;
            }
            if arrived {
                break;
            }
        }
    }

    let mut path = Vec::new();
    let mut i = reached.unwrap_or(0);
    loop {
        path.push(nodes[i].clone());
        if parents[i] == usize::MAX {
            break;
        }
        i = parents[i];
    }
    path.reverse();
    let raw_len = path.len();

    for _ in 0..cfg.shortcut_attempts {
        if path.len() < 3 {
            break;
        }
        let a = rng.gen_range(0..path.len() - 2);
        let b = rng.gen_range(a + 2..path.len());
        let bridge = interpolate(&path[a], &path[b], eps);
        if bridge.len() >= b - a - 1 {
            continue;
        }
        if bridge.iter().all(|q| !check(q, meter)) {
            path.splice(a + 1..b, bridge);
        }
    }

    let mut trajectory = Trajectory::new(
        format!("rrt-{}", cfg.seed),
        "rrt",
        ConfigForm::Actuator,
        phase_grid(path.len()),
        path,
    );
    trajectory.seed = Some(cfg.seed);
    Ok(RrtPlan {
        trajectory,
        nodes: nodes.len(),
        extensions,
        raw_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{Joint, JointKind, Keypoint};
    use nalgebra::{Isometry3, Vector3};

    fn planar() -> HandModel {
        let joint = |name: &str, parent, x| Joint {
            name: name.into(),
            kind: JointKind::Revolute,
            axis: Vector3::z(),
            parent,
            origin: Isometry3::translation(x, 0.0, 0.0),
        };
        HandModel::new(
            "planar",
            vec![joint("a", None, 0.0), joint("b", Some(0), 0.5)],
            vec![-1.0, -1.0],
            vec![1.0, 1.0],
            vec![Keypoint {
                name: "tip".into(),
                link: 1,
                offset: Vector3::new(0.5, 0.0, 0.0),
                fingertip: true,
            }],
        )
        .unwrap()
    }

    fn wall(q: &[f64]) -> bool {
        q[0].abs() < 0.05 && !(0.3..0.4).contains(&q[1])
    }

    fn assert_path_invariants(p: &RrtPlan, start: &[f64], goal: &[f64], eps: f64) {
        let f = &p.trajectory.frames;
        assert!(max_norm_diff(&f[0], start) <= eps);
        assert!(max_norm_diff(f.last().unwrap(), goal) <= eps);
        for w in f.windows(2) {
            assert!(max_norm_diff(&w[0], &w[1]) <= eps * (1.0 + 1e-12));
        }
    }

    #[test]
    fn start_equal_to_goal_is_a_single_node() {
        let m = planar();
        let mut meter = CostMeter::new();
        let q = [0.2, -0.1];
        let p = rrt_plan(&m, &q, &q, &mut |_| false, &RrtConfig::default(), &mut meter).unwrap();
        assert_eq!(p.trajectory.len(), 1);
        assert_eq!(p.extensions, 0);
        assert_eq!(p.nodes, 1);
    }

    #[test]
    fn free_space_goal_is_found_across_seeds() {
        let m = planar();
        let (start, goal) = ([-0.8, -0.7], [0.9, 0.6]);
        let mut found = 0;
        for seed in 0..100 {
            let cfg = RrtConfig {
                seed,
                ..RrtConfig::default()
            };
            let mut meter = CostMeter::new();
            if let Ok(p) = rrt_plan(&m, &start, &goal, &mut |_| false, &cfg, &mut meter) {
                assert_path_invariants(&p, &start, &goal, cfg.step_size);
                found += 1;
            }
        }
        assert!(found >= 99, "{found}");
    }

    #[test]
    fn corridor_path_is_collision_free_when_densified() {
        let m = planar();
        let (start, goal) = ([-0.5, -0.5], [0.5, -0.5]);
        let cfg = RrtConfig {
            seed: 3,
            ..RrtConfig::default()
        };
        let mut meter = CostMeter::new();
        let mut calls = 0u64;
        let p = rrt_plan(
            &m,
            &start,
            &goal,
            &mut |q| {
                calls += 1;
                wall(q)
            },
            &cfg,
            &mut meter,
        )
        .unwrap();
        assert_eq!(meter.collision_checks(), calls);
        assert_path_invariants(&p, &start, &goal, cfg.step_size);
        assert!(p.trajectory.frames.iter().any(|q| q[0].abs() < 0.05));
        for w in p.trajectory.frames.windows(2) {
            for k in 0..=20 {
                let s = k as f64 / 20.0;
                let q: Vec<f64> = w[0].iter().zip(&w[1]).map(|(a, b)| a + s * (b - a)).collect();
                assert!(!wall(&q), "{q:?}");
            }
        }
        assert!(p.trajectory.len() < p.raw_len);
    }

    #[test]
    fn blocked_goal_exhausts_the_tree() {
        let m = planar();
        let cfg = RrtConfig {
            max_nodes: 300,
            ..RrtConfig::default()
        };
        let mut meter = CostMeter::new();
        let err = rrt_plan(&m, &[-0.5, 0.0], &[0.5, 0.0], &mut |q| q[0].abs() < 0.05, &cfg, &mut meter).unwrap_err();
        match err {
            PlanError::Exhausted { nodes, meter: snap } => {
                assert_eq!(nodes, 300);
                assert_eq!(snap, meter);
                assert!(snap.collision_checks() > 0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn seeded_runs_repeat_exactly() {
        let m = planar();
        let cfg = RrtConfig {
            seed: 11,
            ..RrtConfig::default()
        };
        let run = || {
            let mut meter = CostMeter::new();
            let p = rrt_plan(&m, &[-0.5, -0.5], &[0.5, -0.5], &mut wall, &cfg, &mut meter).unwrap();
            (p, meter)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_bad_config_and_inputs() {
        let m = planar();
        let mut meter = CostMeter::new();
        for bias in [0.0, 1.0] {
            let cfg = RrtConfig {
                goal_bias: bias,
                ..RrtConfig::default()
            };
            assert!(rrt_plan(&m, &[0.0, 0.0], &[0.1, 0.1], &mut |_| false, &cfg, &mut meter).is_err());
        }
        let cfg = RrtConfig::default();
        assert!(rrt_plan(&m, &[0.0, 0.0], &[2.0, 0.0], &mut |_| false, &cfg, &mut meter).is_err());
        assert!(rrt_plan(&m, &[0.0, 0.0], &[0.5, 0.0], &mut |q| q[0] < 0.1, &cfg, &mut meter).is_err());
    }
}
