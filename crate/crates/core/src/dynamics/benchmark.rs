//! Reference models and the tracking benchmarks that compare augmented PD
//! with plain PD.

use nalgebra::{Isometry3, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    rollout, Controller, DynamicsError, DynamicsModel, PdGains, RolloutConfig, SplineTarget, TargetSource,
    TargetState, DEFAULT_KP,
};
use crate::kinematics::{HandModel, Joint, JointKind, LinkInertial};

/// Planar two-link arm: both joints rotate about z, links extend along x
/// and gravity points along -y.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLinkParams {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    /// Distances from each joint to its link's center of mass.
    pub lc1: f64,
    pub lc2: f64,
    /// Rotational inertias about the centers of mass (z axis).
    pub i1: f64,
    pub i2: f64,
    pub g: f64,
}

impl Default for TwoLinkParams {
    fn default() -> Self {
        Self {
            m1: 5.0,
            m2: 4.0,
            l1: 1.0,
            lc1: 0.5,
            lc2: 0.5,
            i1: 0.42,
            i2: 0.33,
            g: 9.81,
        }
    }
}

impl TwoLinkParams {
    /// Closed-form inverse dynamics from the Lagrangian of the arm.
    pub fn inverse_dynamics(&self, q: &[f64], qd: &[f64], qdd: &[f64]) -> [f64; 2] {
        let Self {
            m1,
            m2,
            l1,
            lc1,
            lc2,
            i1,
            i2,
            g,
        } = *self;
        let (c2, s2) = (q[1].cos(), q[1].sin());
        let m11 = i1 + i2 + m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * c2);
        let m12 = i2 + m2 * (lc2 * lc2 + l1 * lc2 * c2);
        let m22 = i2 + m2 * lc2 * lc2;
        let h = m2 * l1 * lc2 * s2;
        let g1 = (m1 * lc1 + m2 * l1) * g * q[0].cos() + m2 * lc2 * g * (q[0] + q[1]).cos();
        let g2 = m2 * lc2 * g * (q[0] + q[1]).cos();
        [
            m11 * qdd[0] + m12 * qdd[1] - h * (2.0 * qd[0] * qd[1] + qd[1] * qd[1]) + g1,
            m12 * qdd[0] + m22 * qdd[1] + h * qd[0] * qd[0] + g2,
        ]
    }
}

fn z_joint(name: &str, parent: Option<usize>, x: f64) -> Joint {
    Joint {
        name: name.into(),
        kind: JointKind::Revolute,
        axis: Vector3::z(),
        parent,
        origin: Isometry3::translation(x, 0.0, 0.0),
    }
}

fn rod(mass: f64, com: f64, izz: f64) -> LinkInertial {
    LinkInertial {
        mass,
        com: Vector3::new(com, 0.0, 0.0),
        inertia: Matrix3::identity() * izz,
    }
}

pub fn two_link(p: &TwoLinkParams) -> DynamicsModel {
    DynamicsModel::new(
        vec![z_joint("shoulder", None, 0.0), z_joint("elbow", Some(0), p.l1)],
        vec![rod(p.m1, p.lc1, p.i1), rod(p.m2, p.lc2, p.i2)],
        Vector3::new(0.0, -p.g, 0.0),
    )
    .expect("two-link parameters are valid")
}

/// Point-like pendulum swinging in the xy-plane under gravity -y; the
/// angle is measured from the +x axis.
pub fn pendulum(mass: f64, length: f64) -> DynamicsModel {
    DynamicsModel::new(
        vec![z_joint("pivot", None, 0.0)],
        vec![rod(mass, length, 1e-9)],
        Vector3::new(0.0, -9.81, 0.0),
    )
    .expect("pendulum parameters are valid")
}

/// `q_i(s) = offset_i + amplitude_i sin(frequency_i s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SineTarget {
    amplitude: Vec<f64>,
    frequency: Vec<f64>,
    offset: Vec<f64>,
    duration: f64,
}

impl SineTarget {
    pub fn new(amplitude: Vec<f64>, frequency: Vec<f64>, offset: Vec<f64>, duration: f64) -> Self {
        assert!(amplitude.len() == frequency.len() && amplitude.len() == offset.len());
        Self {
            amplitude,
            frequency,
            offset,
            duration,
        }
    }
}

impl TargetSource for SineTarget {
    fn dof(&self) -> usize {
        self.amplitude.len()
    }

    fn duration(&self) -> f64 {
        self.duration
    }

    fn state(&self, s: f64) -> Result<TargetState, DynamicsError> {
        let n = self.dof();
        let mut out = TargetState::at_rest(vec![0.0; n]);
        for i in 0..n {
            let (a, w) = (self.amplitude[i], self.frequency[i]);
            let (sn, cs) = (w * s).sin_cos();
            out.q[i] = self.offset[i] + a * sn;
            out.qd[i] = a * w * cs;
            out.qdd[i] = -a * w * w * sn;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Benchmark {
    TwoLink,
    ToyHand,
}

impl Benchmark {
    pub fn name(self) -> &'static str {
        match self {
            Benchmark::TwoLink => "two-link",
            Benchmark::ToyHand => "toy-hand",
        }
    }
}

pub const MASS_SCALES: [f64; 3] = [1.0, 2.0, 3.0];
/// Target speed multipliers of the grid columns.
pub const SPEEDS: [f64; 3] = [0.5, 1.0, 2.0];
/// Joint bandwidth (rad/s) of the inertia-scaled hand gains.
pub const HAND_BANDWIDTH: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackingCell {
    pub benchmark: Benchmark,
    pub mass_scale: f64,
    pub speed: f64,
    /// Infinite when the rollout diverged.
    pub augmented_rmse: f64,
    pub plain_rmse: f64,
}

fn hand_waypoints(hand: &HandModel, speed: f64) -> Result<SplineTarget, DynamicsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mid = hand.mid_config();
    let frames: Vec<Vec<f64>> = (0..5)
        .map(|k| {
            mid.iter()
                .enumerate()
                .map(|(i, m)| {
                    let half = 0.25 * (hand.upper[i] - hand.lower[i]).min(1.0);
                    if k == 0 {
                        *m
                    } else {
                        m + rng.gen_range(-half..half)
                    }
                })
                .collect()
        })
        .collect();
    let duration = 4.0 / speed;
    let times: Vec<f64> = (0..5).map(|k| duration * k as f64 / 4.0).collect();
    SplineTarget::new(&times, &frames)
}

/// Tracking RMSE of one rollout; a diverged rollout counts as infinite.
fn tracking_rmse(model: &DynamicsModel, controller: Controller, target: &dyn TargetSource) -> Result<f64, DynamicsError> {
    let s0 = target.state(0.0)?;
    match rollout(model, &controller, target, &s0.q, &s0.qd, &RolloutConfig::default()) {
        Ok(h) => Ok(h.tracking_rmse()),
        Err(DynamicsError::Diverged { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

fn run_pair(model: &DynamicsModel, gains: &PdGains, target: &dyn TargetSource) -> Result<(f64, f64), DynamicsError> {
    Ok((
        tracking_rmse(model, Controller::AugmentedPd(gains.clone()), target)?,
        tracking_rmse(model, Controller::PlainPd(gains.clone()), target)?,
    ))
}

/// Tracking RMSE of both controllers for every mass multiplier and target
/// speed. Controller and plant share the scaled model; gains stay fixed
/// at their unscaled values.
pub fn tracking_grid(benchmark: Benchmark, mass_scales: &[f64], speeds: &[f64]) -> Result<Vec<TrackingCell>, DynamicsError> {
    let mut cells = Vec::with_capacity(mass_scales.len() * speeds.len());
    match benchmark {
        Benchmark::TwoLink => {
            let base = two_link(&TwoLinkParams::default());
            let gains = PdGains::uniform(2, DEFAULT_KP)?;
            for &m in mass_scales {
                let model = base.with_mass_scale(m)?;
                for &v in speeds {
                    let target = SineTarget::new(vec![0.5, 0.4], vec![1.2 * v, 1.6 * v], vec![0.2, -0.3], 4.0);
                    let (a, p) = run_pair(&model, &gains, &target)?;
                    cells.push(TrackingCell {
                        benchmark,
                        mass_scale: m,
                        speed: v,
                        augmented_rmse: a,
                        plain_rmse: p,
                    });
                }
            }
        }
        Benchmark::ToyHand => {
            let hand = HandModel::toy_allegro();
            let base = DynamicsModel::from_hand(&hand)?;
            let gains = PdGains::inertia_scaled(&base, &hand.mid_config(), HAND_BANDWIDTH)?;
            for &m in mass_scales {
                let model = base.with_mass_scale(m)?;
                for &v in speeds {
                    let target = hand_waypoints(&hand, v)?;
                    let (a, p) = run_pair(&model, &gains, &target)?;
                    cells.push(TrackingCell {
                        benchmark,
                        mass_scale: m,
                        speed: v,
                        augmented_rmse: a,
                        plain_rmse: p,
                    });
                }
            }
        }
    }
    Ok(cells)
}
