use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Isometry3, Matrix3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::rotation::{rot_x, rot_y, rot_z};
use super::KinematicsError;

pub const MODEL_FORMAT: &str = "cgf-hand-model";
pub const MODEL_VERSION: u32 = 1;

/// Actuated degrees of freedom of the dexterous hand: 6 virtual root joints
/// plus 16 finger joints.
pub const HAND_DOF: usize = 22;
pub const HAND_KEYPOINTS: usize = 15;
pub const MIN_FINGERTIPS: usize = 4;
/// Number of virtual joints that carry the root pose.
pub const ROOT_DOF: usize = 6;

const TOY_ALLEGRO: &str = include_str!("../../models/toy_allegro.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JointKind {
    Prismatic,
    Revolute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    /// Unit axis in the joint frame.
    pub axis: Vector3<f64>,
    pub parent: Option<usize>,
    /// Fixed transform from the parent link frame to the joint frame.
    pub origin: Isometry3<f64>,
}

impl Joint {
    /// Transform contributed by the joint variable.
    pub fn motion(&self, q: f64) -> Isometry3<f64> {
        match self.kind {
            JointKind::Prismatic => Isometry3::from_parts(
                Translation3::from(self.axis * q),
                UnitQuaternion::identity(),
            ),
            JointKind::Revolute => Isometry3::from_parts(
                Translation3::identity(),
                UnitQuaternion::from_scaled_axis(self.axis * q),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub name: String,
    /// Index of the link (the child link of joint `link`).
    pub link: usize,
    pub offset: Vector3<f64>,
    pub fingertip: bool,
}

/// Mass properties of one link, expressed in the link frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkInertial {
    pub mass: f64,
    pub com: Vector3<f64>,
    /// Rotational inertia about the center of mass.
    pub inertia: Matrix3<f64>,
}

/// Kinematic tree of single-DoF joints with box limits and a keypoint set.
///
/// Every joint owns the link that follows it, so joint and link indices
/// coincide. Parents always precede children.
#[derive(Debug, Clone, PartialEq)]
pub struct HandModel {
    pub name: String,
    pub joints: Vec<Joint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub keypoints: Vec<Keypoint>,
    pub inertials: Option<Vec<LinkInertial>>,
    pub gravity: Vector3<f64>,
}

impl HandModel {
    /// Builds a model and checks the structural invariants (tree ordering,
    /// unit axes, limit ordering, keypoint links).
    pub fn new(
        name: impl Into<String>,
        joints: Vec<Joint>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        keypoints: Vec<Keypoint>,
    ) -> Result<Self, KinematicsError> {
        let model = Self {
            name: name.into(),
            joints,
            lower,
            upper,
            keypoints,
            inertials: None,
            gravity: Vector3::new(0.0, 0.0, -9.81),
        };
        model.validate_structure()?;
        Ok(model)
    }

    pub fn with_inertials(
        mut self,
        inertials: Vec<LinkInertial>,
        gravity: Vector3<f64>,
    ) -> Result<Self, KinematicsError> {
        if inertials.len() != self.joints.len() {
            return Err(KinematicsError::Invalid(format!(
                "{} inertial entries for {} links",
                inertials.len(),
                self.joints.len()
            )));
        }
        self.inertials = Some(inertials);
        self.gravity = gravity;
        Ok(self)
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn num_keypoints(&self) -> usize {
        self.keypoints.len()
    }

    pub fn fingertip_indices(&self) -> Vec<usize> {
        self.keypoints
            .iter()
            .enumerate()
            .filter(|(_, k)| k.fingertip)
            .map(|(i, _)| i)
            .collect()
    }

    /// Midpoint of the joint limits.
    pub fn mid_config(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn clamp(&self, q: &mut [f64]) {
        for ((v, l), u) in q.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.len() == self.dof()
            && q
                .iter()
                .zip(&self.lower)
                .zip(&self.upper)
                .all(|((v, l), u)| *v >= *l && *v <= *u)
    }

    /// True when the first six joints are the virtual root chain
    /// (x, y, z prismatic followed by x, y, z revolute, no fixed offsets).
    pub fn has_virtual_root(&self) -> bool {
        if self.joints.len() < ROOT_DOF {
            return false;
        }
        let kinds = [
            JointKind::Prismatic,
            JointKind::Prismatic,
            JointKind::Prismatic,
            JointKind::Revolute,
            JointKind::Revolute,
            JointKind::Revolute,
        ];
        self.joints[..ROOT_DOF].iter().enumerate().all(|(i, j)| {
            let mut axis = Vector3::zeros();
            axis[i % 3] = 1.0;
            j.kind == kinds[i]
                && j.axis == axis
                && j.parent == i.checked_sub(1)
                && j.origin == Isometry3::identity()
        })
    }

    /// Whether `joint` is `ancestor` or lies below it in the tree.
    pub fn is_descendant(&self, joint: usize, ancestor: usize) -> bool {
        let mut cur = Some(joint);
        while let Some(j) = cur {
            if j == ancestor {
                return true;
            }
            if j < ancestor {
                return false;
            }
            cur = self.joints[j].parent;
        }
        false
    }

    pub fn validate_structure(&self) -> Result<(), KinematicsError> {
        let n = self.joints.len();
        if n == 0 {
            return Err(KinematicsError::Invalid("model has no joints".into()));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(KinematicsError::Invalid(format!(
                "limit vectors must have {n} entries"
            )));
        }
        for (i, j) in self.joints.iter().enumerate() {
            if let Some(p) = j.parent {
                // parents precede children, which rules out cycles
                if p >= i {
                    return Err(KinematicsError::Invalid(format!(
                        "joint {} has parent index {p} not preceding it",
                        j.name
                    )));
                }
            }
            if (j.axis.norm() - 1.0).abs() > 1e-9 {
                return Err(KinematicsError::Invalid(format!(
                    "joint {} axis is not a unit vector",
                    j.name
                )));
            }
            if !(self.lower[i] <= self.upper[i]) {
                return Err(KinematicsError::Invalid(format!(
                    "joint {} has lower limit above upper limit",
                    j.name
                )));
            }
        }
        if self.keypoints.is_empty() {
            return Err(KinematicsError::Invalid("model has no keypoints".into()));
        }
        for k in &self.keypoints {
            if k.link >= n {
                return Err(KinematicsError::Invalid(format!(
                    "keypoint {} references missing link {}",
                    k.name, k.link
                )));
            }
        }
        if let Some(inertials) = &self.inertials {
            for (i, li) in inertials.iter().enumerate() {
                validate_inertial(&self.joints[i].name, li)?;
            }
        }
        Ok(())
    }

    /// Checks the dexterous-hand layout on top of the structural invariants.
    pub fn validate_hand(&self) -> Result<(), KinematicsError> {
        self.validate_structure()?;
        if self.dof() != HAND_DOF {
            return Err(KinematicsError::Invalid(format!(
                "hand must have {HAND_DOF} DoF, found {}",
                self.dof()
            )));
        }
        if self.keypoints.len() != HAND_KEYPOINTS {
            return Err(KinematicsError::Invalid(format!(
                "hand must have {HAND_KEYPOINTS} keypoints, found {}",
                self.keypoints.len()
            )));
        }
        if self.fingertip_indices().len() < MIN_FINGERTIPS {
            return Err(KinematicsError::Invalid(format!(
                "hand must flag at least {MIN_FINGERTIPS} fingertips"
            )));
        }
        if !self.has_virtual_root() {
            return Err(KinematicsError::Invalid(
                "hand must start with the six virtual root joints".into(),
            ));
        }
        if self.keypoints.iter().any(|k| k.link < ROOT_DOF - 1) {
            return Err(KinematicsError::Invalid(
                "keypoints must attach at or below the root link".into(),
            ));
        }
        Ok(())
    }

    /// The bundled toy Allegro-like hand.
    pub fn toy_allegro() -> Self {
        Self::from_json_str(TOY_ALLEGRO).expect("bundled toy-allegro model is valid")
    }

    /// Parses and validates a hand model document.
    pub fn from_json_str(s: &str) -> Result<Self, KinematicsError> {
        let doc: ModelDocument =
            serde_json::from_str(s).map_err(|e| KinematicsError::Parse(e.to_string()))?;
        let model = doc.into_model()?;
        model.validate_hand()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, KinematicsError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| KinematicsError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&s)
    }

    /// Uniformly scales all lengths (offsets, prismatic limits, keypoints).
    pub fn scaled(&self, s: f64) -> Self {
        let mut m = self.clone();
        for (i, j) in m.joints.iter_mut().enumerate() {
            j.origin.translation.vector *= s;
            if j.kind == JointKind::Prismatic {
                m.lower[i] *= s;
                m.upper[i] *= s;
            }
        }
        for k in &mut m.keypoints {
            k.offset *= s;
        }
        m
    }
}

fn validate_inertial(name: &str, li: &LinkInertial) -> Result<(), KinematicsError> {
    if !(li.mass > 0.0) {
        return Err(KinematicsError::Invalid(format!(
            "link {name} mass must be positive"
        )));
    }
    let i = &li.inertia;
    if (i - i.transpose()).norm() > 1e-12 * (1.0 + i.norm()) {
        return Err(KinematicsError::Invalid(format!(
            "link {name} inertia is not symmetric"
        )));
    }
    if i.cholesky().is_none() {
        return Err(KinematicsError::Invalid(format!(
            "link {name} inertia is not positive definite"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// file schema

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OriginDoc {
    #[serde(default)]
    pub xyz: [f64; 3],
    /// Fixed-axis roll, pitch, yaw: `Rz(yaw) * Ry(pitch) * Rx(roll)`.
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl OriginDoc {
    pub fn to_isometry(&self) -> Isometry3<f64> {
        let r = rot_z(self.rpy[2]) * rot_y(self.rpy[1]) * rot_x(self.rpy[0]);
        let rot = UnitQuaternion::from_matrix(&r);
        Isometry3::from_parts(Translation3::new(self.xyz[0], self.xyz[1], self.xyz[2]), rot)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum JointDoc {
    /// Expands into six virtual joints `<name>_tx .. <name>_rz`.
    FreeRoot {
        name: String,
        translation_limits: [[f64; 2]; 3],
        rotation_limits: [[f64; 2]; 3],
    },
    Prismatic {
        name: String,
        parent: Option<String>,
        axis: [f64; 3],
        #[serde(default = "default_origin")]
        origin: OriginDoc,
        limits: [f64; 2],
    },
    Revolute {
        name: String,
        parent: Option<String>,
        axis: [f64; 3],
        #[serde(default = "default_origin")]
        origin: OriginDoc,
        limits: [f64; 2],
    },
}

fn default_origin() -> OriginDoc {
    OriginDoc {
        xyz: [0.0; 3],
        rpy: [0.0; 3],
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeypointDoc {
    pub name: String,
    pub link: String,
    pub offset: [f64; 3],
    #[serde(default)]
    pub fingertip: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InertialDoc {
    pub mass: f64,
    #[serde(default)]
    pub com: [f64; 3],
    /// `[ixx, iyy, izz, ixy, ixz, iyz]` about the center of mass.
    pub inertia: [f64; 6],
}

impl InertialDoc {
    fn to_inertial(&self) -> LinkInertial {
        let [ixx, iyy, izz, ixy, ixz, iyz] = self.inertia;
        LinkInertial {
            mass: self.mass,
            com: Vector3::from(self.com),
            inertia: Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicsDoc {
    pub gravity: [f64; 3],
    pub default: InertialDoc,
    #[serde(default)]
    pub links: HashMap<String, InertialDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub joints: Vec<JointDoc>,
    pub keypoints: Vec<KeypointDoc>,
    #[serde(default)]
    pub dynamics: Option<DynamicsDoc>,
}

const ROOT_SUFFIXES: [&str; 6] = ["tx", "ty", "tz", "rx", "ry", "rz"];

impl ModelDocument {
    pub fn into_model(self) -> Result<HandModel, KinematicsError> {
        if self.format != MODEL_FORMAT {
            return Err(KinematicsError::Parse(format!(
                "expected format '{MODEL_FORMAT}', found '{}'",
                self.format
            )));
        }
        if self.version != MODEL_VERSION {
            return Err(KinematicsError::Parse(format!(
                "unsupported hand model version {} (this build reads version {MODEL_VERSION})",
                self.version
            )));
        }
        let mut joints = Vec::new();
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        // user-facing name -> link index
        let mut index: HashMap<String, usize> = HashMap::new();

        for (pos, jd) in self.joints.iter().enumerate() {
            match jd {
                JointDoc::FreeRoot {
                    name,
                    translation_limits,
                    rotation_limits,
                } => {
                    if pos != 0 {
                        return Err(KinematicsError::Invalid(
                            "free-root joint must be declared first".into(),
                        ));
                    }
                    for (k, suffix) in ROOT_SUFFIXES.iter().enumerate() {
                        let mut axis = Vector3::zeros();
                        axis[k % 3] = 1.0;
                        let (kind, lim) = if k < 3 {
                            (JointKind::Prismatic, translation_limits[k])
                        } else {
                            (JointKind::Revolute, rotation_limits[k - 3])
                        };
                        let jname = format!("{name}_{suffix}");
                        index.insert(jname.clone(), joints.len());
                        joints.push(Joint {
                            name: jname,
                            kind,
                            axis,
                            parent: k.checked_sub(1),
                            origin: Isometry3::identity(),
                        });
                        lower.push(lim[0]);
                        upper.push(lim[1]);
                    }
                    index.insert(name.clone(), ROOT_DOF - 1);
                }
                JointDoc::Prismatic {
                    name,
                    parent,
                    axis,
                    origin,
                    limits,
                }
                | JointDoc::Revolute {
                    name,
                    parent,
                    axis,
                    origin,
                    limits,
                } => {
                    let kind = if matches!(jd, JointDoc::Prismatic { .. }) {
                        JointKind::Prismatic
                    } else {
                        JointKind::Revolute
                    };
                    let parent = match parent {
                        None => None,
                        Some(p) => Some(*index.get(p).ok_or_else(|| {
                            KinematicsError::Invalid(format!(
                                "joint {name} references unknown or later parent {p}"
                            ))
                        })?),
                    };
                    let axis = Vector3::from(*axis);
                    if axis.norm() == 0.0 {
                        return Err(KinematicsError::Invalid(format!(
                            "joint {name} has a zero axis"
                        )));
                    }
                    if index.contains_key(name) {
                        return Err(KinematicsError::Invalid(format!(
                            "duplicate joint name {name}"
                        )));
                    }
                    index.insert(name.clone(), joints.len());
                    joints.push(Joint {
                        name: name.clone(),
                        kind,
                        axis: axis.normalize(),
                        parent,
                        origin: origin.to_isometry(),
                    });
                    lower.push(limits[0]);
                    upper.push(limits[1]);
                }
            }
        }

        let keypoints = self
            .keypoints
            .iter()
            .map(|k| {
                let link = *index.get(&k.link).ok_or_else(|| {
                    KinematicsError::Invalid(format!(
                        "keypoint {} references unknown link {}",
                        k.name, k.link
                    ))
                })?;
                Ok(Keypoint {
                    name: k.name.clone(),
                    link,
                    offset: Vector3::from(k.offset),
                    fingertip: k.fingertip,
                })
            })
            .collect::<Result<Vec<_>, KinematicsError>>()?;

        let mut model = HandModel::new(self.name, joints, lower, upper, keypoints)?;
        if let Some(dyn_doc) = &self.dynamics {
            for key in dyn_doc.links.keys() {
                if !index.contains_key(key) {
                    return Err(KinematicsError::Invalid(format!(
                        "dynamics entry for unknown link {key}"
                    )));
                }
            }
            let inertials = model
                .joints
                .iter()
                .map(|j| {
                    dyn_doc
                        .links
                        .get(&j.name)
                        .unwrap_or(&dyn_doc.default)
                        .to_inertial()
                })
                .collect();
            model = model.with_inertials(inertials, Vector3::from(dyn_doc.gravity))?;
            model.validate_structure()?;
        }
        Ok(model)
    }
}
