use super::{CubicSpline, DynamicsError};
use crate::cgf::{CgfParams, ConditionedDecoder, DERIVATIVE_STEP};
use crate::kinematics::{continuous_to_actuator, continuous_velocity_to_actuator};
use crate::trajectory::Trajectory;

/// Desired position, velocity and acceleration at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetState {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub qdd: Vec<f64>,
}

impl TargetState {
    pub fn at_rest(q: Vec<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            qd: vec![0.0; n],
            qdd: vec![0.0; n],
        }
    }
}

/// A reference signal in physical time `s` seconds, `0 <= s <= duration`.
/// After `duration` the target rests at its final configuration.
pub trait TargetSource {
    fn dof(&self) -> usize;
    fn duration(&self) -> f64;
    fn state(&self, s: f64) -> Result<TargetState, DynamicsError>;

    /// Position only; sources may override this with a cheaper path.
    fn position(&self, s: f64) -> Result<Vec<f64>, DynamicsError> {
        Ok(self.state(s)?.q)
    }
}

/// Per-joint natural cubic splines through timed frames. Velocities and
/// accelerations are the spline derivatives.
#[derive(Debug, Clone)]
pub struct SplineTarget {
    splines: Vec<CubicSpline>,
}

impl SplineTarget {
    pub fn new(times: &[f64], frames: &[Vec<f64>]) -> Result<Self, DynamicsError> {
        let dof = frames.first().map_or(0, Vec::len);
        if frames.len() != times.len() || dof == 0 || frames.iter().any(|f| f.len() != dof) {
            return Err(DynamicsError::Target("frames and times must be non-empty and consistent".into()));
        }
        let splines = (0..dof)
            .map(|j| {
                let col: Vec<f64> = frames.iter().map(|f| f[j]).collect();
                CubicSpline::natural(times, &col)
            })
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| DynamicsError::Target("need two or more strictly increasing finite times".into()))?;
        if splines[0].start() != 0.0 {
            return Err(DynamicsError::Target("target times must start at 0".into()));
        }
        Ok(Self { splines })
    }

    /// Spreads the frames of `traj` (in storage order) evenly over
    /// `duration` seconds. Continuous-form trajectories are converted to
    /// the actuator form first.
    pub fn from_trajectory(traj: &Trajectory, duration: f64) -> Result<Self, DynamicsError> {
        let traj = traj.to_actuator().map_err(|e| DynamicsError::Target(e.to_string()))?;
        let n = traj.frames.len();
        if n < 2 || !(duration > 0.0) {
            return Err(DynamicsError::Target("need two frames and a positive duration".into()));
        }
        let times: Vec<f64> = (0..n).map(|k| duration * k as f64 / (n - 1) as f64).collect();
        Self::new(&times, &traj.frames)
    }
}

impl TargetSource for SplineTarget {
    fn dof(&self) -> usize {
        self.splines.len()
    }

    fn duration(&self) -> f64 {
        self.splines[0].end()
    }

    fn state(&self, s: f64) -> Result<TargetState, DynamicsError> {
        let inside = s <= self.duration();
        let mut out = TargetState::at_rest(Vec::with_capacity(self.dof()));
        out.qd.clear();
        out.qdd.clear();
        for sp in &self.splines {
            let (y, dy, ddy) = sp.eval(s);
            out.q.push(y);
            out.qd.push(if inside { dy } else { 0.0 });
            out.qdd.push(if inside { ddy } else { 0.0 });
        }
        Ok(out)
    }

    fn position(&self, s: f64) -> Result<Vec<f64>, DynamicsError> {
        Ok(self.splines.iter().map(|sp| sp.eval(s).0).collect())
    }
}

/// A decoded trajectory played over `duration` seconds. Physical time `s`
/// maps to phase `t = 1 - s / duration`, so the rollout starts at the
/// approach (`t = 1`) and ends at the grasp (`t = 0`). Outputs are in the
/// actuator form.
#[derive(Debug, Clone)]
pub struct CgfTarget<'a> {
    decoder: ConditionedDecoder<'a>,
    duration: f64,
}

impl<'a> CgfTarget<'a> {
    pub fn new(params: &'a CgfParams, z: &[f64], f_o: &[f64], duration: f64) -> Result<Self, DynamicsError> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(DynamicsError::Target("duration must be positive".into()));
        }
        let decoder = ConditionedDecoder::new(params, z, f_o).map_err(|e| DynamicsError::Target(e.to_string()))?;
        Ok(Self { decoder, duration })
    }

    fn phase(&self, s: f64) -> f64 {
        (1.0 - s / self.duration).clamp(0.0, 1.0)
    }

    /// Actuator-form configuration and its phase derivative.
    fn actuator_phase_velocity(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>), DynamicsError> {
        let (q, dq) = self
            .decoder
            .first_derivative(t)
            .map_err(|e| DynamicsError::Target(e.to_string()))?;
        Ok((continuous_to_actuator(&q)?, continuous_velocity_to_actuator(&q, &dq)?))
    }
}

impl TargetSource for CgfTarget<'_> {
    fn dof(&self) -> usize {
        crate::cgf::ACTUATOR_WIDTH
    }

    fn duration(&self) -> f64 {
        self.duration
    }

    fn state(&self, s: f64) -> Result<TargetState, DynamicsError> {
        let t = self.phase(s);
        let (q, w) = self.actuator_phase_velocity(t)?;
        if s > self.duration {
            return Ok(TargetState::at_rest(q));
        }
        let h = DERIVATIVE_STEP;
        let (_, w_plus) = self.actuator_phase_velocity(t + h)?;
        let (_, w_minus) = self.actuator_phase_velocity(t - h)?;
        let d = self.duration;
        // ds = -d dt: first derivatives flip sign, second derivatives do not
        let qd = w.iter().map(|v| -v / d).collect();
        let qdd = w_plus.iter().zip(&w_minus).map(|(a, b)| (a - b) / (2.0 * h) / (d * d)).collect();
        Ok(TargetState { q, qd, qdd })
    }

    fn position(&self, s: f64) -> Result<Vec<f64>, DynamicsError> {
        Ok(continuous_to_actuator(&self.decoder.eval(self.phase(s)))?)
    }
}
