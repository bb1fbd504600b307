use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::PlanError;
use crate::dynamics::{rollout, Controller, DynamicsError, DynamicsModel, RolloutConfig, TargetSource, TargetState};
use crate::eval::CostMeter;
use crate::kinematics::{fk_actuator, HandModel};
use crate::trajectory::{phase_grid, ConfigForm, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CemConfig {
    pub popsize: usize,
    pub horizon: usize,
    pub elites: usize,
    pub iterations: usize,
    /// Receding-horizon steps, one control frame each.
    pub steps: usize,
    /// Initial standard deviation of every action component.
    pub action_std: f64,
    pub seed: u64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            popsize: 100,
            horizon: 5,
            elites: 10,
            iterations: 2,
            steps: 40,
            action_std: 0.02,
            seed: 0,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.elites == 0 || self.elites > self.popsize {
            return Err(PlanError::Config(format!(
                "elites must lie in 1..={}, got {}",
                self.popsize, self.elites
            )));
        }
        if self.horizon == 0 || self.iterations == 0 {
            return Err(PlanError::Config("horizon and iterations must be at least 1".into()));
        }
        if !(self.action_std >= 0.0 && self.action_std.is_finite()) {
            return Err(PlanError::Config("action_std must be non-negative".into()));
        }
        Ok(())
    }
}

/// Simulator used for candidate and executed rollouts. An action is an
/// increment of the controller's set point, held for one control frame
/// of `rollout.frame_skip` integration steps.
pub struct CemDynamics<'a> {
    pub model: &'a DynamicsModel,
    pub controller: Controller,
    pub rollout: RolloutConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
}

/// Scores the states reached at the end of each frame of a candidate.
pub trait RolloutCost {
    fn cost(&self, states: &[SimState], goal: &[f64]) -> f64;
}

impl<F: Fn(&[SimState], &[f64]) -> f64> RolloutCost for F {
    fn cost(&self, states: &[SimState], goal: &[f64]) -> f64 {
        self(states, goal)
    }
}

/// Squared joint distance to the goal at the terminal state minus
/// `bonus` times the fraction of fingertips within `contact_threshold` of
/// the object cloud.
pub struct GraspCost {
    pub hand: HandModel,
    pub cloud: Vec<Vector3<f64>>,
    pub contact_threshold: f64,
    pub bonus: f64,
}

impl RolloutCost for GraspCost {
    fn cost(&self, states: &[SimState], goal: &[f64]) -> f64 {
        let Some(last) = states.last() else {
            return f64::INFINITY;
        };
        let dist: f64 = last.q.iter().zip(goal).map(|(a, b)| (a - b) * (a - b)).sum();
        let Ok(kp) = fk_actuator(&self.hand, &last.q) else {
            return f64::INFINITY;
        };
        let tips = self.hand.fingertip_indices();
        let r2 = self.contact_threshold * self.contact_threshold;
        let touching = tips
            .iter()
            .filter(|&&i| self.cloud.iter().any(|p| (p - kp[i]).norm_squared() <= r2))
            .count();
        dist - self.bonus * touching as f64 / tips.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CemIteration {
    pub step: usize,
    pub iteration: usize,
    pub elite_mean_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CemPlan {
    /// Executed states at each control frame, start to end.
    pub trajectory: Trajectory,
    pub iterations: Vec<CemIteration>,
}

struct Hold(Vec<f64>);

impl TargetSource for Hold {
    fn dof(&self) -> usize {
        self.0.len()
    }

    fn duration(&self) -> f64 {
        0.0
    }

    fn state(&self, _s: f64) -> Result<TargetState, DynamicsError> {
        Ok(TargetState::at_rest(self.0.clone()))
    }
}

impl CemDynamics<'_> {
    fn frame_time(&self) -> f64 {
        self.rollout.dt * self.rollout.frame_skip as f64
    }

    /// One control frame toward `set_point`; integration steps are metered
    /// even when the frame diverges.
    fn frame(&self, state: &SimState, set_point: &[f64], meter: &mut CostMeter) -> Result<SimState, DynamicsError> {
        let cfg = RolloutConfig {
            duration: Some(self.frame_time()),
            ..self.rollout.clone()
        };
        match rollout(self.model, &self.controller, &Hold(set_point.to_vec()), &state.q, &state.qd, &cfg) {
            Ok(h) => {
                meter.add_env_steps(h.num_steps() as u64);
                let last = h.steps.last().expect("history holds the initial state");
                Ok(SimState {
                    q: last.q.clone(),
                    qd: last.qd.clone(),
                })
            }
            Err(DynamicsError::Diverged { step, history }) => {
                meter.add_env_steps(history.num_steps() as u64);
                Err(DynamicsError::Diverged { step, history })
            }
            Err(e) => Err(e),
        }
    }
}

/// Elite selection and Gaussian refit. `population` holds flattened action
/// sequences; ties in cost keep the lower index. Returns the mean, the
/// per-component standard deviation (population form) and the elite
/// indices.
pub fn refit(population: &[Vec<f64>], costs: &[f64], elites: usize) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..population.len()).collect();
    order.sort_by(|a, b| costs[*a].total_cmp(&costs[*b]).then(a.cmp(b)));
    order.truncate(elites);
    let width = population[0].len();
    let e = order.len() as f64;
    let mut mean = vec![0.0; width];
    for &i in &order {
        for (m, v) in mean.iter_mut().zip(&population[i]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= e);
    let mut var = vec![0.0; width];
    for &i in &order {
        for ((s, v), m) in var.iter_mut().zip(&population[i]).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|s| (s / e).sqrt()).collect();
    (mean, std, order)
}

/// Receding-horizon cross-entropy planning. At every step, `iterations`
/// rounds of sampling refit a diagonal Gaussian over `horizon`-frame
/// action sequences to the `elites` cheapest candidates; the first action
/// of the refit mean is executed and the mean is shifted forward as the
/// next warm start. Elites carry over between rounds, so the elite mean
/// cost never increases within a step.
///
/// Every simulated integration step, candidate or executed, is charged to
/// `meter`. Candidates that diverge cost infinity; divergence of the
/// executed frame is an error.
pub fn cem_mpc_plan(
    dynamics: &CemDynamics,
    cost: &dyn RolloutCost,
    start: &SimState,
    goal: &[f64],
    cfg: &CemConfig,
    meter: &mut CostMeter,
) -> Result<CemPlan, PlanError> {
    cfg.validate()?;
    let n = dynamics.model.dof();
    if start.q.len() != n || start.qd.len() != n || goal.len() != n {
        return Err(PlanError::Input(format!("states and goal must have {n} entries")));
    }
    let width = n * cfg.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = start.clone();
    let mut set_point = start.q.clone();
    let mut mean = vec![0.0; width];
    let mut frames = vec![state.q.clone()];
    let mut velocities = vec![state.qd.clone()];
    let mut log = Vec::new();

    for step in 0..cfg.steps {
        let mut std = vec![cfg.action_std; width];
        let mut kept: Vec<(Vec<f64>, f64)> = Vec::new();
        for iteration in 0..cfg.iterations {
            let fresh = cfg.popsize - kept.len();
            let mut population: Vec<Vec<f64>> = kept.iter().map(|(a, _)| a.clone()).collect();
            let mut costs: Vec<f64> = kept.iter().map(|(_, c)| *c).collect();
            for _ in 0..fresh {
                let sample: Vec<f64> = mean
                    .iter()
                    .zip(&std)
                    .map(|(m, s)| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + s * z
                    })
                    .collect();
                costs.push(candidate_cost(dynamics, cost, &state, &set_point, &sample, n, goal, meter)?);
                population.push(sample);
            }
            let (m, s, elite) = refit(&population, &costs, cfg.elites);
            let elite_mean_cost = elite.iter().map(|&i| costs[i]).sum::<f64>() / elite.len() as f64;
            log.push(CemIteration {
                step,
                iteration,
                elite_mean_cost,
            });
            kept = elite.iter().map(|&i| (population[i].clone(), costs[i])).collect();
            mean = m;
            std = s;
        }
        for (p, a) in set_point.iter_mut().zip(&mean[..n]) {
            *p += a;
        }
        state = dynamics.frame(&state, &set_point, meter)?;
        frames.push(state.q.clone());
        velocities.push(state.qd.clone());
        mean.rotate_left(n);
        mean[width - n..].iter_mut().for_each(|v| *v = 0.0);
    }

    let mut trajectory = Trajectory::new(
        format!("cem-{}", cfg.seed),
        "cem",
        ConfigForm::Actuator,
        phase_grid(frames.len()),
        frames,
    );
    trajectory.velocities = Some(velocities);
    trajectory.seed = Some(cfg.seed);
    trajectory.executed = true;
    Ok(CemPlan {
        trajectory,
        iterations: log,
    })
}

#[allow(clippy::too_many_arguments)]
fn candidate_cost(
    dynamics: &CemDynamics,
    cost: &dyn RolloutCost,
    state: &SimState,
    set_point: &[f64],
    actions: &[f64],
    n: usize,
    goal: &[f64],
    meter: &mut CostMeter,
) -> Result<f64, PlanError> {
    let mut s = state.clone();
    let mut p = set_point.to_vec();
    let mut states = Vec::with_capacity(actions.len() / n);
    for a in actions.chunks(n) {
        for (v, d) in p.iter_mut().zip(a) {
            *v += d;
        }
        match dynamics.frame(&s, &p, meter) {
            Ok(next) => s = next,
            Err(DynamicsError::Diverged { .. }) => return Ok(f64::INFINITY),
            Err(e) => return Err(e.into()),
        }
        states.push(s.clone());
    }
    let c = cost.cost(&states, goal);
    Ok(if c.is_nan() { f64::INFINITY } else { c })
}
