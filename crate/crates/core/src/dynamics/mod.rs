//! Rigid-body dynamics of the hand tree: recursive Newton-Euler inverse
//! dynamics, the composite-rigid-body mass matrix, PD controllers and a
//! fixed-step rollout.

pub mod benchmark;
mod control;
mod rollout;
pub mod spatial;
mod spline;
mod target;

use nalgebra::{DMatrix, DVector, Matrix6, Vector3};

pub use control::{augmented_pd, plain_pd, Controller, PdGains, DEFAULT_KP};
pub use rollout::{rollout, RolloutConfig, RolloutHistory, RolloutStep};
pub use spline::CubicSpline;
pub use target::{CgfTarget, SplineTarget, TargetSource, TargetState};

use crate::kinematics::{HandModel, Joint, JointKind, KinematicsError, LinkInertial};
use spatial::{cross_force, cross_motion, motion_transform, spatial_inertia, SpatialVector};

#[derive(Debug, thiserror::Error)]
pub enum DynamicsError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("invalid dynamics model: {0}")]
    Invalid(String),
    #[error("mass matrix is not positive definite")]
    SingularMassMatrix,
    #[error("invalid gains: {0}")]
    Gains(String),
    #[error("target: {0}")]
    Target(String),
    #[error("state diverged at step {step}")]
    Diverged { step: usize, history: Box<RolloutHistory> },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// Mass properties attached to the kinematic tree of a [`HandModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsModel {
    joints: Vec<Joint>,
    inertials: Vec<LinkInertial>,
    spatial: Vec<Matrix6<f64>>,
    gravity: Vector3<f64>,
}

fn check_inertial(i: usize, li: &LinkInertial) -> Result<(), DynamicsError> {
    if !(li.mass > 0.0 && li.mass.is_finite()) {
        return Err(DynamicsError::Invalid(format!("link {i} mass must be positive")));
    }
    let asym = (li.inertia - li.inertia.transpose()).amax();
    if asym > 1e-12 * li.inertia.amax().max(1.0) || li.inertia.cholesky().is_none() {
        return Err(DynamicsError::Invalid(format!("link {i} inertia is not symmetric positive definite")));
    }
    Ok(())
}

impl DynamicsModel {
    pub fn new(joints: Vec<Joint>, inertials: Vec<LinkInertial>, gravity: Vector3<f64>) -> Result<Self, DynamicsError> {
        if joints.len() != inertials.len() {
            return Err(DynamicsError::Invalid(format!(
                "{} inertial entries for {} links",
                inertials.len(),
                joints.len()
            )));
        }
        for (i, j) in joints.iter().enumerate() {
            if j.parent.is_some_and(|p| p >= i) {
                return Err(DynamicsError::Invalid(format!("joint {i} precedes its parent")));
            }
        }
        for (i, li) in inertials.iter().enumerate() {
            check_inertial(i, li)?;
        }
        if !gravity.iter().all(|g| g.is_finite()) {
            return Err(DynamicsError::NonFinite("gravity"));
        }
        let spatial = inertials.iter().map(spatial_inertia).collect();
        Ok(Self {
            joints,
            inertials,
            spatial,
            gravity,
        })
    }

    /// Uses the mass properties stored in the hand model file.
    pub fn from_hand(model: &HandModel) -> Result<Self, DynamicsError> {
        let inertials = model
            .inertials
            .clone()
            .ok_or_else(|| DynamicsError::Invalid(format!("model `{}` has no dynamics section", model.name)))?;
        Self::new(model.joints.clone(), inertials, model.gravity)
    }

    /// Copy with every mass and inertia multiplied by `factor`.
    pub fn with_mass_scale(&self, factor: f64) -> Result<Self, DynamicsError> {
        let inertials = self
            .inertials
            .iter()
            .map(|li| LinkInertial {
                mass: li.mass * factor,
                com: li.com,
                inertia: li.inertia * factor,
            })
            .collect();
        Self::new(self.joints.clone(), inertials, self.gravity)
    }

    pub fn with_gravity(&self, gravity: Vector3<f64>) -> Self {
        Self {
            gravity,
            ..self.clone()
        }
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn gravity(&self) -> Vector3<f64> {
        self.gravity
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn inertials(&self) -> &[LinkInertial] {
        &self.inertials
    }

    fn check(&self, v: &[f64], what: &'static str) -> Result<(), DynamicsError> {
        if v.len() != self.dof() {
            return Err(DynamicsError::Dimension {
                expected: self.dof(),
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(DynamicsError::NonFinite(what));
        }
        Ok(())
    }

    fn motion_subspace(&self, i: usize) -> SpatialVector {
        let a = self.joints[i].axis;
        match self.joints[i].kind {
            JointKind::Revolute => SpatialVector::new(a.x, a.y, a.z, 0.0, 0.0, 0.0),
            JointKind::Prismatic => SpatialVector::new(0.0, 0.0, 0.0, a.x, a.y, a.z),
        }
    }

    /// Parent-to-child motion transforms at `q`.
    fn transforms(&self, q: &[f64]) -> Vec<Matrix6<f64>> {
        self.joints
            .iter()
            .zip(q)
            .map(|(j, qi)| {
                let iso = j.origin * j.motion(*qi);
                motion_transform(iso.rotation.to_rotation_matrix().matrix(), &iso.translation.vector)
            })
            .collect()
    }

    /// Kinetic plus gravitational potential energy.
    pub fn energy(&self, q: &[f64], qd: &[f64]) -> Result<f64, DynamicsError> {
        self.check(q, "configuration")?;
        self.check(qd, "velocity")?;
        let h = mass_matrix(self, q)?;
        let v = DVector::from_column_slice(qd);
        let kinetic = 0.5 * v.dot(&(&h * &v));
        // potential from world-frame centers of mass
        let mut frames: Vec<nalgebra::Isometry3<f64>> = Vec::with_capacity(self.dof());
        let mut potential = 0.0;
        for (i, j) in self.joints.iter().enumerate() {
            let local = j.origin * j.motion(q[i]);
            let world = match j.parent {
                Some(p) => frames[p] * local,
                None => local,
            };
            let c = world * nalgebra::Point3::from(self.inertials[i].com);
            potential -= self.inertials[i].mass * self.gravity.dot(&c.coords);
            frames.push(world);
        }
        Ok(kinetic + potential)
    }
}

/// Joint torques that produce accelerations `qdd` at state `(q, qd)`.
pub fn rnea(model: &DynamicsModel, q: &[f64], qd: &[f64], qdd: &[f64]) -> Result<Vec<f64>, DynamicsError> {
    model.check(q, "configuration")?;
    model.check(qd, "velocity")?;
    model.check(qdd, "acceleration")?;
    let n = model.dof();
    let xs = model.transforms(q);
    let g = model.gravity;
    let a_base = SpatialVector::new(0.0, 0.0, 0.0, -g.x, -g.y, -g.z);
    let mut v = vec![SpatialVector::zeros(); n];
    let mut a = vec![SpatialVector::zeros(); n];
    let mut f = vec![SpatialVector::zeros(); n];
    for i in 0..n {
        let s = model.motion_subspace(i);
        let vj = s * qd[i];
        let (vp, ap) = match model.joints[i].parent {
            Some(p) => (v[p], a[p]),
            None => (SpatialVector::zeros(), a_base),
        };
        v[i] = xs[i] * vp + vj;
        a[i] = xs[i] * ap + s * qdd[i] + cross_motion(&v[i], &vj);
        let iv = model.spatial[i] * v[i];
        f[i] = model.spatial[i] * a[i] + cross_force(&v[i], &iv);
    }
    let mut tau = vec![0.0; n];
    for i in (0..n).rev() {
        tau[i] = model.motion_subspace(i).dot(&f[i]);
        if let Some(p) = model.joints[i].parent {
            let up = xs[i].transpose() * f[i];
            f[p] += up;
        }
    }
    Ok(tau)
}

/// Joint-space inertia matrix by the composite-rigid-body algorithm.
pub fn mass_matrix(model: &DynamicsModel, q: &[f64]) -> Result<DMatrix<f64>, DynamicsError> {
    model.check(q, "configuration")?;
    let n = model.dof();
    let xs = model.transforms(q);
    let mut ic = model.spatial.clone();
    for i in (0..n).rev() {
        if let Some(p) = model.joints[i].parent {
            let add = xs[i].transpose() * ic[i] * xs[i];
            ic[p] += add;
        }
    }
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        let si = model.motion_subspace(i);
        let mut force = ic[i] * si;
        h[(i, i)] = si.dot(&force);
        let mut j = i;
        while let Some(p) = model.joints[j].parent {
            force = xs[j].transpose() * force;
            j = p;
            let hij = model.motion_subspace(j).dot(&force);
            h[(i, j)] = hij;
            h[(j, i)] = hij;
        }
    }
    Ok(h)
}

/// Accelerations produced by torques `tau`, solving `H q̈ = τ - C(q, q̇)`.
pub fn forward_dynamics(model: &DynamicsModel, q: &[f64], qd: &[f64], tau: &[f64]) -> Result<Vec<f64>, DynamicsError> {
    model.check(tau, "torque")?;
    let bias = rnea(model, q, qd, &vec![0.0; model.dof()])?;
    let h = mass_matrix(model, q)?;
    let chol = h.cholesky().ok_or(DynamicsError::SingularMassMatrix)?;
    let rhs = DVector::from_iterator(tau.len(), tau.iter().zip(&bias).map(|(t, b)| t - b));
    let qdd = chol.solve(&rhs);
    if qdd.iter().any(|x| !x.is_finite()) {
        return Err(DynamicsError::SingularMassMatrix);
    }
    Ok(qdd.as_slice().to_vec())
}
