use serde::{Deserialize, Serialize};

use super::{forward_dynamics, Controller, DynamicsError, DynamicsModel, TargetSource};
use crate::trajectory::{ConfigForm, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    pub dt: f64,
    /// The controller is evaluated every `frame_skip` steps and its torque
    /// held in between.
    pub frame_skip: usize,
    /// Simulated time; the target duration when absent.
    pub duration: Option<f64>,
    /// Abort once any joint speed exceeds this.
    pub max_velocity: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            dt: 0.004,
            frame_skip: 5,
            duration: None,
            max_velocity: 1e4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutStep {
    pub time: f64,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    /// Torque applied during the step that ended here.
    pub tau: Vec<f64>,
    /// `q - q_d` at `time`.
    pub error: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutHistory {
    pub controller: String,
    pub dt: f64,
    /// Entry 0 is the initial state; entry `k` follows `k` steps.
    pub steps: Vec<RolloutStep>,
}

impl RolloutHistory {
    /// Root mean square of every joint error after the initial state.
    pub fn tracking_rmse(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for s in self.steps.iter().skip(1) {
            sum += s.error.iter().map(|e| e * e).sum::<f64>();
            count += s.error.len();
        }
        if count == 0 {
            0.0
        } else {
            (sum / count as f64).sqrt()
        }
    }

    pub fn max_abs_error(&self) -> f64 {
        self.steps
            .iter()
            .flat_map(|s| s.error.iter())
            .fold(0.0, |m, e| m.max(e.abs()))
    }

    /// Number of integration steps taken.
    pub fn num_steps(&self) -> usize {
        self.steps.len().saturating_sub(1)
    }

    /// The executed joint history as an actuator-form trajectory.
    pub fn to_trajectory(&self, id: impl Into<String>) -> Trajectory {
        let mut t = Trajectory::new(
            id,
            self.controller.clone(),
            ConfigForm::Actuator,
            self.steps.iter().map(|s| s.time).collect(),
            self.steps.iter().map(|s| s.q.clone()).collect(),
        );
        t.velocities = Some(self.steps.iter().map(|s| s.qd.clone()).collect());
        t.executed = true;
        t
    }
}

/// Simulates `model` under `controller` with semi-implicit Euler steps.
pub fn rollout(
    model: &DynamicsModel,
    controller: &Controller,
    target: &dyn TargetSource,
    q0: &[f64],
    qd0: &[f64],
    cfg: &RolloutConfig,
) -> Result<RolloutHistory, DynamicsError> {
    let n = model.dof();
    if target.dof() != n {
        return Err(DynamicsError::Dimension {
            expected: n,
            found: target.dof(),
        });
    }
    if q0.len() != n || qd0.len() != n {
        return Err(DynamicsError::Dimension {
            expected: n,
            found: q0.len().max(qd0.len()),
        });
    }
    if !(cfg.dt > 0.0) || cfg.frame_skip == 0 {
        return Err(DynamicsError::Target("dt and frame_skip must be positive".into()));
    }
    let duration = cfg.duration.unwrap_or_else(|| target.duration());
    let total = (duration / cfg.dt - 1e-9).ceil().max(0.0) as usize;
    let mut q = q0.to_vec();
    let mut qd = qd0.to_vec();
    let mut history = RolloutHistory {
        controller: controller.name().to_string(),
        dt: cfg.dt,
        steps: Vec::with_capacity(total + 1),
    };
    let error = |q: &[f64], time: f64| -> Result<Vec<f64>, DynamicsError> {
        let qd = target.position(time)?;
        Ok(q.iter().zip(&qd).map(|(a, b)| a - b).collect())
    };
    history.steps.push(RolloutStep {
        time: 0.0,
        q: q.clone(),
        qd: qd.clone(),
        tau: vec![0.0; n],
        error: error(&q, 0.0)?,
    });
    let mut tau = vec![0.0; n];
    for k in 0..total {
        let time = k as f64 * cfg.dt;
        if k % cfg.frame_skip == 0 {
            tau = controller.torque(model, &q, &qd, &target.state(time)?)?;
        }
        let qdd = forward_dynamics(model, &q, &qd, &tau)?;
        for i in 0..n {
            qd[i] += cfg.dt * qdd[i];
            q[i] += cfg.dt * qd[i];
        }
        let next = (k + 1) as f64 * cfg.dt;
        let diverged = qd.iter().any(|v| !(v.abs() <= cfg.max_velocity));
        history.steps.push(RolloutStep {
            time: next,
            q: q.clone(),
            qd: qd.clone(),
            tau: tau.clone(),
            error: if diverged { vec![f64::NAN; n] } else { error(&q, next)? },
        });
        if diverged {
            return Err(DynamicsError::Diverged {
                step: k + 1,
                history: Box::new(history),
            });
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::benchmark::{pendulum, two_link, SineTarget, TwoLinkParams};
    use crate::dynamics::{PdGains, TargetState, DEFAULT_KP};
    use nalgebra::Vector3;

    struct Hold(Vec<f64>, f64);

    impl TargetSource for Hold {
        fn dof(&self) -> usize {
            self.0.len()
        }
        fn duration(&self) -> f64 {
            self.1
        }
        fn state(&self, _s: f64) -> Result<TargetState, DynamicsError> {
            Ok(TargetState::at_rest(self.0.clone()))
        }
    }

    #[test]
    fn passive_rollout_without_gravity_stays_put() {
        let model = two_link(&TwoLinkParams::default()).with_gravity(Vector3::zeros());
        let q0 = [0.3, -0.2];
        let h = rollout(&model, &Controller::Passive, &Hold(q0.to_vec(), 1.0), &q0, &[0.0, 0.0], &RolloutConfig::default()).unwrap();
        assert_eq!(h.num_steps(), 250);
        assert!(h.steps.iter().all(|s| s.q == q0.to_vec()));
    }

    #[test]
    fn pendulum_energy_drift_is_small() {
        let model = pendulum(1.0, 1.0);
        let (q0, qd0) = ([-0.3], [0.0]);
        let h = rollout(&model, &Controller::Passive, &Hold(vec![0.0], 1.0), &q0, &qd0, &RolloutConfig::default()).unwrap();
        let e0 = model.energy(&q0, &qd0).unwrap();
        // potential measured from the lowest point so the ratio is meaningful
        let base = model.energy(&[-std::f64::consts::FRAC_PI_2], &[0.0]).unwrap();
        let worst = h
            .steps
            .iter()
            .map(|s| ((model.energy(&s.q, &s.qd).unwrap() - e0) / (e0 - base)).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.01, "relative drift {worst}");
    }

    #[test]
    fn overdamped_step_converges_monotonically() {
        let model = pendulum(1.0, 1.0).with_gravity(Vector3::zeros());
        // inertia about the pivot is ~1, so kv^2 > 4 kp is overdamped
        let gains = PdGains::new(vec![20.0], vec![20.0]).unwrap();
        let cfg = RolloutConfig {
            frame_skip: 1,
            ..RolloutConfig::default()
        };
        let h = rollout(&model, &Controller::PlainPd(gains), &Hold(vec![1.0], 10.0), &[0.0], &[0.0], &cfg).unwrap();
        let qs: Vec<f64> = h.steps.iter().map(|s| s.q[0]).collect();
        assert!(qs.windows(2).all(|w| w[1] >= w[0]));
        assert!(qs.iter().all(|q| *q <= 1.0));
        assert!((qs.last().unwrap() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn plain_pd_sags_under_gravity() {
        let (m, l) = (1.0, 1.0);
        let model = pendulum(m, l);
        let gains = PdGains::uniform(1, DEFAULT_KP).unwrap();
        let h = rollout(&model, &Controller::PlainPd(gains.clone()), &Hold(vec![0.0], 20.0), &[0.0], &[0.0], &RolloutConfig::default()).unwrap();
        let last = h.steps.last().unwrap();
        // balance: kp e = -m g l cos(q)
        let expected = -m * 9.81 * l * last.q[0].cos() / gains.kp[0];
        assert!((last.error[0] - expected).abs() < 1e-6, "{} vs {expected}", last.error[0]);
        assert!(last.error[0] < -0.1);
    }

    #[test]
    fn exact_feedforward_tracks_a_sine() {
        let model = pendulum(1.0, 1.0);
        let gains = PdGains::uniform(1, DEFAULT_KP).unwrap();
        let target = SineTarget::new(vec![1.0], vec![1.0], vec![0.0], 10.0);
        let s0 = target.state(0.0).unwrap();
        let h = rollout(&model, &Controller::AugmentedPd(gains), &target, &s0.q, &s0.qd, &RolloutConfig::default()).unwrap();
        let err = h.max_abs_error();
        assert!(err <= 1e-6, "max tracking error {err:e}");
    }

    #[test]
    fn frame_skip_barely_matters_on_slow_targets() {
        let model = two_link(&TwoLinkParams::default());
        let gains = PdGains::uniform(2, DEFAULT_KP).unwrap();
        let target = SineTarget::new(vec![0.3, 0.2], vec![0.5, 0.5], vec![0.2, -0.4], 8.0);
        let s0 = target.state(0.0).unwrap();
        let run = |skip| {
            let cfg = RolloutConfig {
                frame_skip: skip,
                ..RolloutConfig::default()
            };
            rollout(&model, &Controller::PlainPd(gains.clone()), &target, &s0.q, &s0.qd, &cfg)
                .unwrap()
                .tracking_rmse()
        };
        let (one, five) = (run(1), run(5));
        assert!((one - five).abs() < 0.05 * one, "{one} vs {five}");
    }

    #[test]
    fn divergence_returns_partial_history() {
        let model = pendulum(1.0, 1.0).with_gravity(Vector3::zeros());
        let gains = PdGains::new(vec![1e7], vec![1.0]).unwrap();
        let err = rollout(&model, &Controller::PlainPd(gains), &Hold(vec![1.0], 5.0), &[0.0], &[0.0], &RolloutConfig::default()).unwrap_err();
        match err {
            DynamicsError::Diverged { step, history } => {
                assert_eq!(history.num_steps(), step);
                assert!(step < 1250);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn history_serializes_as_executed_trajectory() {
        let model = pendulum(1.0, 1.0);
        let h = rollout(&model, &Controller::Passive, &Hold(vec![0.0], 0.02), &[0.1], &[0.0], &RolloutConfig::default()).unwrap();
        let t = h.to_trajectory("run");
        assert!(t.executed);
        assert_eq!(t.frames.len(), 6);
        assert_eq!(Trajectory::from_json(&t.to_json().unwrap()).unwrap(), t);
    }
}
