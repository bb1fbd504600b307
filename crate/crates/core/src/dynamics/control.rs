use serde::{Deserialize, Serialize};

use super::{mass_matrix, rnea, DynamicsError, DynamicsModel, TargetState};

pub const DEFAULT_KP: f64 = 50.0;

/// Diagonal PD gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdGains {
    pub kp: Vec<f64>,
    pub kv: Vec<f64>,
}

impl PdGains {
    pub fn new(kp: Vec<f64>, kv: Vec<f64>) -> Result<Self, DynamicsError> {
        let g = Self { kp, kv };
        g.validate()?;
        Ok(g)
    }

    /// `K_p = kp` and the critically damped `K_v = 2 sqrt(kp)` on every DoF.
    pub fn uniform(dof: usize, kp: f64) -> Result<Self, DynamicsError> {
        Self::new(vec![kp; dof], vec![2.0 * kp.sqrt(); dof])
    }

    /// Per-DoF gains `K_p = w^2 m_i`, `K_v = 2 w m_i`, where
    /// `m_i = 1 / (H^-1)_ii` is the effective inertia of joint `i` at `q`
    /// with every other joint free. Each joint gets roughly the bandwidth
    /// `w` even when the links are strongly coupled.
    pub fn inertia_scaled(model: &DynamicsModel, q: &[f64], bandwidth: f64) -> Result<Self, DynamicsError> {
        let h = mass_matrix(model, q)?;
        let inv = h.cholesky().ok_or(DynamicsError::SingularMassMatrix)?.inverse();
        let m: Vec<f64> = (0..model.dof()).map(|i| 1.0 / inv[(i, i)]).collect();
        Self::new(
            m.iter().map(|m| bandwidth * bandwidth * m).collect(),
            m.iter().map(|m| 2.0 * bandwidth * m).collect(),
        )
    }

    pub fn dof(&self) -> usize {
        self.kp.len()
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.kp.len() != self.kv.len() {
            return Err(DynamicsError::Gains("K_p and K_v lengths differ".into()));
        }
        if self.kp.iter().chain(&self.kv).any(|k| !(*k > 0.0 && k.is_finite())) {
            return Err(DynamicsError::Gains("gains must be finite and strictly positive".into()));
        }
        Ok(())
    }

    fn check_dof(&self, n: usize) -> Result<(), DynamicsError> {
        if self.dof() != n {
            return Err(DynamicsError::Dimension {
                expected: n,
                found: self.dof(),
            });
        }
        Ok(())
    }
}

/// `τ = ID(q̈_d, q, q̇) - K_p (q - q_d) - K_v (q̇ - q̇_d)`.
pub fn augmented_pd(
    model: &DynamicsModel,
    gains: &PdGains,
    q: &[f64],
    qd: &[f64],
    target: &TargetState,
) -> Result<Vec<f64>, DynamicsError> {
    gains.check_dof(model.dof())?;
    let ff = rnea(model, q, qd, &target.qdd)?;
    Ok((0..q.len())
        .map(|i| ff[i] - gains.kp[i] * (q[i] - target.q[i]) - gains.kv[i] * (qd[i] - target.qd[i]))
        .collect())
}

/// `τ = -K_p (q - q_d) - K_v q̇`.
pub fn plain_pd(gains: &PdGains, q: &[f64], qd: &[f64], q_d: &[f64]) -> Vec<f64> {
    (0..q.len())
        .map(|i| -gains.kp[i] * (q[i] - q_d[i]) - gains.kv[i] * qd[i])
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Controller {
    AugmentedPd(PdGains),
    PlainPd(PdGains),
    /// Applies no torque.
    Passive,
}

impl Controller {
    pub fn name(&self) -> &'static str {
        match self {
            Controller::AugmentedPd(_) => "augmented-pd",
            Controller::PlainPd(_) => "pd",
            Controller::Passive => "passive",
        }
    }

    pub fn torque(
        &self,
        model: &DynamicsModel,
        q: &[f64],
        qd: &[f64],
        target: &TargetState,
    ) -> Result<Vec<f64>, DynamicsError> {
        match self {
            Controller::AugmentedPd(g) => augmented_pd(model, g, q, qd, target),
            Controller::PlainPd(g) => {
                g.check_dof(model.dof())?;
                Ok(plain_pd(g, q, qd, &target.q))
            }
            Controller::Passive => Ok(vec![0.0; model.dof()]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::benchmark::{two_link, TwoLinkParams};
    use nalgebra::Vector3;

    fn state(q: &[f64], qd: &[f64], qdd: &[f64]) -> TargetState {
        TargetState {
            q: q.to_vec(),
            qd: qd.to_vec(),
            qdd: qdd.to_vec(),
        }
    }

    #[test]
    fn gains_must_be_positive() {
        assert!(PdGains::new(vec![1.0], vec![0.0]).is_err());
        assert!(PdGains::new(vec![1.0, 2.0], vec![1.0]).is_err());
        let g = PdGains::uniform(3, 50.0).unwrap();
        assert_eq!(g.kv[0], 2.0 * 50f64.sqrt());
    }

    #[test]
    fn zero_error_is_pure_feedforward() {
        let model = two_link(&TwoLinkParams::default());
        let gains = PdGains::uniform(2, DEFAULT_KP).unwrap();
        let (q, qd, qdd) = ([0.3, -0.4], [0.5, 0.1], [1.0, -2.0]);
        let tau = augmented_pd(&model, &gains, &q, &qd, &state(&q, &qd, &qdd)).unwrap();
        assert_eq!(tau, rnea(&model, &q, &qd, &qdd).unwrap());
    }

    #[test]
    fn matches_the_control_law_term_by_term() {
        let model = two_link(&TwoLinkParams::default());
        let gains = PdGains::new(vec![40.0, 60.0], vec![11.0, 9.0]).unwrap();
        let (q, qd) = ([0.3, -0.4], [0.5, 0.1]);
        let target = state(&[0.1, 0.2], &[-0.3, 0.7], &[1.0, -2.0]);
        let tau = augmented_pd(&model, &gains, &q, &qd, &target).unwrap();
        let ff = rnea(&model, &q, &qd, &target.qdd).unwrap();
        for i in 0..2 {
            let p = gains.kp[i] * (q[i] - target.q[i]);
            let d = gains.kv[i] * (qd[i] - target.qd[i]);
            assert_eq!(tau[i].to_bits(), (ff[i] - p - d).to_bits());
        }
    }

    #[test]
    fn reduces_to_pd_without_gravity_or_acceleration() {
        let model = two_link(&TwoLinkParams::default()).with_gravity(Vector3::zeros());
        let gains = PdGains::uniform(2, DEFAULT_KP).unwrap();
        // at rest the feedforward of zero acceleration is zero
        let (q, qd) = ([0.3, -0.4], [0.0, 0.0]);
        let target = state(&[0.1, 0.2], &[0.0, 0.0], &[0.0, 0.0]);
        let tau = augmented_pd(&model, &gains, &q, &qd, &target).unwrap();
        let pd = plain_pd(&gains, &q, &qd, &target.q);
        for i in 0..2 {
            assert!((tau[i] - pd[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn plain_pd_is_zero_at_target() {
        let gains = PdGains::uniform(2, DEFAULT_KP).unwrap();
        assert_eq!(plain_pd(&gains, &[0.1, 0.2], &[0.0, 0.0], &[0.1, 0.2]), vec![0.0, 0.0]);
    }
}
