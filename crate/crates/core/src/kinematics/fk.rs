use nalgebra::{DMatrix, Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::model::{HandModel, JointKind, ROOT_DOF};
use super::rotation::{
    euler_xyz_to_matrix, matrix_to_euler_xyz, matrix_to_rot6d, rot6d_matrix_derivatives,
    rot6d_to_matrix,
};
use super::KinematicsError;

/// Width of the continuous root encoding: translation (3) + 6D rotation (6).
pub const CONTINUOUS_ROOT_WIDTH: usize = 9;

/// Hand configuration in the continuous form: root translation, 6D root
/// rotation and the finger joint angles. Flattened this is 25 numbers for
/// the dexterous hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointConfig {
    pub root_translation: [f64; 3],
    pub root_rot6d: [f64; 6],
    pub finger_angles: Vec<f64>,
}

impl JointConfig {
    pub fn width(&self) -> usize {
        CONTINUOUS_ROOT_WIDTH + self.finger_angles.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.width());
        v.extend_from_slice(&self.root_translation);
        v.extend_from_slice(&self.root_rot6d);
        v.extend_from_slice(&self.finger_angles);
        v
    }

    pub fn from_flat(v: &[f64]) -> Result<Self, KinematicsError> {
        if v.len() < CONTINUOUS_ROOT_WIDTH {
            return Err(KinematicsError::Dimension {
                expected: CONTINUOUS_ROOT_WIDTH,
                found: v.len(),
            });
        }
        Ok(Self {
            root_translation: [v[0], v[1], v[2]],
            root_rot6d: [v[3], v[4], v[5], v[6], v[7], v[8]],
            finger_angles: v[CONTINUOUS_ROOT_WIDTH..].to_vec(),
        })
    }

    /// From the actuator form (translation, XYZ root joint angles, fingers).
    pub fn from_actuator(q: &[f64]) -> Result<Self, KinematicsError> {
        if q.len() < ROOT_DOF {
            return Err(KinematicsError::Dimension {
                expected: ROOT_DOF,
                found: q.len(),
            });
        }
        let r = euler_xyz_to_matrix(&Vector3::new(q[3], q[4], q[5]));
        Ok(Self {
            root_translation: [q[0], q[1], q[2]],
            root_rot6d: matrix_to_rot6d(&r),
            finger_angles: q[ROOT_DOF..].to_vec(),
        })
    }

    pub fn to_actuator(&self) -> Result<Vec<f64>, KinematicsError> {
        let r = rot6d_to_matrix(&self.root_rot6d)?;
        let e = matrix_to_euler_xyz(&r);
        let mut q = Vec::with_capacity(ROOT_DOF + self.finger_angles.len());
        q.extend_from_slice(&self.root_translation);
        q.extend_from_slice(e.as_slice());
        q.extend_from_slice(&self.finger_angles);
        Ok(q)
    }

    pub fn root_transform(&self) -> Result<Isometry3<f64>, KinematicsError> {
        let r = rot6d_to_matrix(&self.root_rot6d)?;
        Ok(Isometry3::from_parts(
            Translation3::from(Vector3::from(self.root_translation)),
            UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r)),
        ))
    }
}

/// Actuator-form vector to continuous flat vector.
pub fn actuator_to_continuous(q: &[f64]) -> Result<Vec<f64>, KinematicsError> {
    Ok(JointConfig::from_actuator(q)?.to_flat())
}

/// Continuous flat vector to actuator form.
pub fn continuous_to_actuator(v: &[f64]) -> Result<Vec<f64>, KinematicsError> {
    JointConfig::from_flat(v)?.to_actuator()
}

/// Maps a continuous-form velocity `dv` at `v` to the actuator form, using
/// the derivative of the XYZ angle extraction.
pub fn continuous_velocity_to_actuator(v: &[f64], dv: &[f64]) -> Result<Vec<f64>, KinematicsError> {
    if dv.len() != v.len() {
        return Err(KinematicsError::Dimension {
            expected: v.len(),
            found: dv.len(),
        });
    }
    let cfg = JointConfig::from_flat(v)?;
    let m = rot6d_to_matrix(&cfg.root_rot6d)?;
    let d_rot = rot6d_matrix_derivatives(&cfg.root_rot6d)?;
    let mut dm = Matrix3::zeros();
    for (k, d) in d_rot.iter().enumerate() {
        dm += d * dv[3 + k];
    }
    let s = m[(0, 2)];
    if s.abs() >= 1.0 - 1e-12 {
        return Err(KinematicsError::DegenerateRotation);
    }
    let da = (m[(1, 2)] * dm[(2, 2)] - m[(2, 2)] * dm[(1, 2)]) / (m[(1, 2)].powi(2) + m[(2, 2)].powi(2));
    let db = dm[(0, 2)] / (1.0 - s * s).sqrt();
    let dc = (m[(0, 1)] * dm[(0, 0)] - m[(0, 0)] * dm[(0, 1)]) / (m[(0, 1)].powi(2) + m[(0, 0)].powi(2));
    let mut out = Vec::with_capacity(v.len() - 3);
    out.extend_from_slice(&dv[..3]);
    out.extend_from_slice(&[da, db, dc]);
    out.extend_from_slice(&dv[CONTINUOUS_ROOT_WIDTH..]);
    Ok(out)
}

/// Per-link world frames plus the number of transform compositions used.
struct Frames {
    links: Vec<Isometry3<f64>>,
    /// Joint frames (parent link frame composed with the fixed origin).
    joints: Vec<Isometry3<f64>>,
    compositions: usize,
}

/// Walks the tree once. When `root` is given, the first six joints are
/// replaced by that transform.
fn link_frames(model: &HandModel, q: &[f64], root: Option<&Isometry3<f64>>) -> Frames {
    let n = model.dof();
    let mut links = Vec::with_capacity(n);
    let mut joints = Vec::with_capacity(n);
    let mut compositions = 0;
    for (i, joint) in model.joints.iter().enumerate() {
        if let (Some(r), true) = (root, i < ROOT_DOF) {
            joints.push(*r);
            links.push(*r);
            continue;
        }
        let parent = match joint.parent {
            Some(p) => links[p] * joint.origin,
            None => joint.origin,
        };
        let link = parent * joint.motion(q[i]);
        compositions += 2;
        joints.push(parent);
        links.push(link);
    }
    Frames {
        links,
        joints,
        compositions,
    }
}

fn keypoints_from(model: &HandModel, frames: &Frames) -> Vec<Vector3<f64>> {
    model
        .keypoints
        .iter()
        .map(|k| frames.links[k.link] * nalgebra::Point3::from(k.offset))
        .map(|p| p.coords)
        .collect()
}

fn check_actuator_dim(model: &HandModel, q: &[f64]) -> Result<(), KinematicsError> {
    if q.len() != model.dof() {
        return Err(KinematicsError::Dimension {
            expected: model.dof(),
            found: q.len(),
        });
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(KinematicsError::NonFinite);
    }
    Ok(())
}

fn check_continuous(model: &HandModel, c: &JointConfig) -> Result<(), KinematicsError> {
    if !model.has_virtual_root() {
        return Err(KinematicsError::Invalid(
            "continuous configurations need a model with a virtual root".into(),
        ));
    }
    let expected = model.dof() - ROOT_DOF;
    if c.finger_angles.len() != expected {
        return Err(KinematicsError::Dimension {
            expected: expected + CONTINUOUS_ROOT_WIDTH,
            found: c.width(),
        });
    }
    if c.to_flat().iter().any(|v| !v.is_finite()) {
        return Err(KinematicsError::NonFinite);
    }
    Ok(())
}

fn padded_joints(c: &JointConfig) -> Vec<f64> {
    let mut q = vec![0.0; ROOT_DOF];
    q.extend_from_slice(&c.finger_angles);
    q
}

/// Forward kinematics of a continuous-form configuration.
pub fn fk(model: &HandModel, config: &JointConfig) -> Result<Vec<Vector3<f64>>, KinematicsError> {
    check_continuous(model, config)?;
    let root = config.root_transform()?;
    let frames = link_frames(model, &padded_joints(config), Some(&root));
    Ok(keypoints_from(model, &frames))
}

/// Forward kinematics in joint (actuator) space.
pub fn fk_actuator(model: &HandModel, q: &[f64]) -> Result<Vec<Vector3<f64>>, KinematicsError> {
    check_actuator_dim(model, q)?;
    let frames = link_frames(model, q, None);
    Ok(keypoints_from(model, &frames))
}

/// Forward kinematics together with the number of rigid-transform
/// compositions performed.
pub fn fk_op_count(model: &HandModel, q: &[f64]) -> Result<usize, KinematicsError> {
    check_actuator_dim(model, q)?;
    Ok(link_frames(model, q, None).compositions)
}

pub fn flatten_keypoints(kp: &[Vector3<f64>]) -> Vec<f64> {
    kp.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

/// Fills the 3-row block of keypoint `k` with the column for joint `j`.
fn joint_column(model: &HandModel, frames: &Frames, j: usize, p: &Vector3<f64>) -> Vector3<f64> {
    let jf = &frames.joints[j];
    let axis = jf.rotation * model.joints[j].axis;
    match model.joints[j].kind {
        JointKind::Prismatic => axis,
        JointKind::Revolute => axis.cross(&(p - jf.translation.vector)),
    }
}

/// Geometric Jacobian `d(keypoints)/dq` in joint space, `(3K) x dof`.
pub fn fk_jacobian_actuator(model: &HandModel, q: &[f64]) -> Result<DMatrix<f64>, KinematicsError> {
    check_actuator_dim(model, q)?;
    let frames = link_frames(model, q, None);
    let kps = keypoints_from(model, &frames);
    let mut jac = DMatrix::zeros(3 * kps.len(), model.dof());
    for (k, (kp, p)) in model.keypoints.iter().zip(&kps).enumerate() {
        // walk up from the keypoint's link: only ancestors contribute
        let mut cur = Some(kp.link);
        while let Some(j) = cur {
            let col = joint_column(model, &frames, j, p);
            jac.fixed_view_mut::<3, 1>(3 * k, j).copy_from(&col);
            cur = model.joints[j].parent;
        }
    }
    Ok(jac)
}

/// Jacobian of the keypoints with respect to the continuous form,
/// `(3K) x (9 + fingers)`; 45 x 25 for the dexterous hand.
pub fn fk_jacobian(model: &HandModel, config: &JointConfig) -> Result<DMatrix<f64>, KinematicsError> {
    check_continuous(model, config)?;
    let root = config.root_transform()?;
    let frames = link_frames(model, &padded_joints(config), Some(&root));
    let kps = keypoints_from(model, &frames);
    let d_rot = rot6d_matrix_derivatives(&config.root_rot6d)?;
    let r_inv: Matrix3<f64> = root.rotation.to_rotation_matrix().into_inner().transpose();
    let t = Vector3::from(config.root_translation);
    let width = config.width();
    let mut jac = DMatrix::zeros(3 * kps.len(), width);
    for (k, (kp, p)) in model.keypoints.iter().zip(&kps).enumerate() {
        for a in 0..3 {
            jac[(3 * k + a, a)] = 1.0;
        }
        let local = r_inv * (p - t);
        for (c, d) in d_rot.iter().enumerate() {
            jac.fixed_view_mut::<3, 1>(3 * k, 3 + c)
                .copy_from(&(d * local));
        }
        let mut cur = Some(kp.link);
        while let Some(j) = cur {
            if j < ROOT_DOF {
                break;
            }
            let col = joint_column(model, &frames, j, p);
            jac.fixed_view_mut::<3, 1>(3 * k, j - ROOT_DOF + CONTINUOUS_ROOT_WIDTH)
                .copy_from(&col);
            cur = model.joints[j].parent;
        }
    }
    Ok(jac)
}
