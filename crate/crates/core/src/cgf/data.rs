use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{CgfError, ACTUATOR_WIDTH};
use crate::autodiff::Tensor;
use crate::demo::Demonstration;
use crate::kinematics::{actuator_to_continuous, fk_actuator, flatten_keypoints, HandModel};

/// One demonstration in training layout. Row `k` of every tensor belongs
/// to phase `t_k = k / (T - 1)`, so row 0 is the grasp frame.
#[derive(Debug, Clone)]
pub struct PreparedDemo {
    pub id: String,
    pub weight: f64,
    pub cloud_index: usize,
    /// `T x 22` actuator-form frames fed to the hand encoder.
    pub hand_input: Tensor,
    /// `T x 25` continuous-form targets.
    pub q_target: Tensor,
    /// `T x 3K` keypoint targets.
    pub kp_target: Tensor,
    /// `T x 1` phases.
    pub times: Tensor,
}

#[derive(Debug, Clone)]
pub struct PreparedDataset {
    /// Distinct training clouds (`N x 3`).
    pub clouds: Vec<Tensor>,
    pub demos: Vec<PreparedDemo>,
}

/// Linear resampling of a timed joint sequence onto `count` evenly spaced
/// times spanning the same interval.
pub fn resample_joints(frames: &[Vec<f64>], times: &[f64], count: usize) -> Vec<Vec<f64>> {
    let (t0, t1) = (times[0], times[times.len() - 1]);
    let mut out = Vec::with_capacity(count);
    let mut seg = 0;
    for k in 0..count {
        let s = if count == 1 { t1 } else { t0 + (t1 - t0) * k as f64 / (count - 1) as f64 };
        while seg + 2 < times.len() && times[seg + 1] < s {
            seg += 1;
        }
        let (a, b) = (times[seg], times[seg + 1]);
        let w = ((s - a) / (b - a)).clamp(0.0, 1.0);
        let q = frames[seg]
            .iter()
            .zip(&frames[seg + 1])
            .map(|(x, y)| x + w * (y - x))
            .collect();
        out.push(q);
    }
    out
}

fn cloud_digest(cloud: &[[f64; 3]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in cloud {
        for v in p {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().into()
}

/// Seeded subset of at most `n` points. The choice depends only on the
/// cloud contents and `seed`, so repeated clouds map to the same subset.
fn subsample(cloud: &[[f64; 3]], n: usize, seed: u64, digest: &[u8; 32]) -> Tensor {
    let rows: Vec<Vec<f64>> = if cloud.len() <= n {
        cloud.iter().map(|p| p.to_vec()).collect()
    } else {
        let mut key = [0u8; 32];
        key.copy_from_slice(digest);
        for (k, s) in key.iter_mut().zip(seed.to_le_bytes()) {
            *k ^= s;
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        let mut idx = rand::seq::index::sample(&mut rng, cloud.len(), n).into_vec();
        idx.sort_unstable();
        idx.iter().map(|i| cloud[*i].to_vec()).collect()
    };
    Tensor::from_rows(&rows).expect("rows have three columns")
}

/// Resamples every demonstration to `frames` frames, reverses time,
/// precomputes targets and subsamples clouds to `points_per_cloud`.
pub fn prepare_dataset(
    model: &HandModel,
    demos: &[Demonstration],
    frames: usize,
    points_per_cloud: usize,
    seed: u64,
) -> Result<PreparedDataset, CgfError> {
    if demos.is_empty() {
        return Err(CgfError::Input("no demonstrations".into()));
    }
    if frames < 2 || points_per_cloud == 0 {
        return Err(CgfError::Config("need at least two frames and one point".into()));
    }
    let mut clouds = Vec::new();
    let mut cloud_ids: HashMap<[u8; 32], usize> = HashMap::new();
    let mut out = Vec::with_capacity(demos.len());
    for demo in demos {
        demo.validate().map_err(|e| CgfError::Input(e.to_string()))?;
        let joints = demo
            .joints
            .as_ref()
            .ok_or_else(|| CgfError::Input(format!("demonstration `{}` has no joint trajectory; retarget it first", demo.id)))?;
        if joints[0].len() != ACTUATOR_WIDTH || model.dof() != ACTUATOR_WIDTH {
            return Err(CgfError::Input(format!("demonstration `{}` is not a {ACTUATOR_WIDTH}-DoF trajectory", demo.id)));
        }
        let digest = cloud_digest(&demo.cloud);
        let cloud_index = *cloud_ids.entry(digest).or_insert_with(|| {
            clouds.push(subsample(&demo.cloud, points_per_cloud, seed, &digest));
            clouds.len() - 1
        });
        let mut resampled = resample_joints(joints, &demo.times, frames);
        resampled.reverse();
        let mut q_rows = Vec::with_capacity(frames);
        let mut kp_rows = Vec::with_capacity(frames);
        for q in &resampled {
            q_rows.push(actuator_to_continuous(q)?);
            kp_rows.push(flatten_keypoints(&fk_actuator(model, q)?));
        }
        out.push(PreparedDemo {
            id: demo.id.clone(),
            weight: demo.weight,
            cloud_index,
            hand_input: Tensor::from_rows(&resampled)?,
            q_target: Tensor::from_rows(&q_rows)?,
            kp_target: Tensor::from_rows(&kp_rows)?,
            times: Tensor::new(frames, 1, (0..frames).map(|k| k as f64 / (frames - 1) as f64).collect())?,
        });
    }
    Ok(PreparedDataset { clouds, demos: out })
}
