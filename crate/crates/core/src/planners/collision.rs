use nalgebra::Vector3;

use super::PlanError;
use crate::kinematics::{fk_actuator, HandModel};

/// Sphere radius around non-fingertip keypoints. Fingertips get radius 0
/// so that a grasp touching the object is not itself a collision.
pub const LINK_SPHERE_RADIUS: f64 = 0.004;

pub fn default_sphere_radii(model: &HandModel) -> Vec<f64> {
    model
        .keypoints
        .iter()
        .map(|k| if k.fingertip { 0.0 } else { LINK_SPHERE_RADIUS })
        .collect()
}

/// True iff some keypoint sphere strictly contains a cloud point.
/// `config` is in actuator form.
pub fn collision_sphere_check(
    model: &HandModel,
    config: &[f64],
    cloud: &[Vector3<f64>],
    radii: &[f64],
) -> Result<bool, PlanError> {
    if radii.len() != model.num_keypoints() {
        return Err(PlanError::Input(format!(
            "{} radii for {} keypoints",
            radii.len(),
            model.num_keypoints()
        )));
    }
    if radii.iter().any(|r| !(*r >= 0.0)) {
        return Err(PlanError::Input("radii must be non-negative".into()));
    }
    if cloud.is_empty() {
        return Ok(false);
    }
    let (lo, hi) = cloud.iter().fold(
        (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    );
    let keypoints = fk_actuator(model, config)?;
    for (k, r) in keypoints.iter().zip(radii) {
        if *r == 0.0 {
            continue;
        }
        // skip spheres that cannot reach the cloud's bounding box
        let gap = (lo - k).sup(&(k - hi)).sup(&Vector3::zeros());
        if gap.norm_squared() >= r * r {
            continue;
        }
        if cloud.iter().any(|p| (p - k).norm_squared() < r * r) {
            return Ok(true);
        }
    }
    Ok(false)
}
