//! Smoothness of joint and keypoint trajectories and the method
//! comparison tables.
//!
//! Every coordinate is first mapped affinely so that it starts at 0 and
//! ends at 1. Position smoothness is the L1 length of the normalized path
//! per frame pair, averaged over coordinates; velocity and acceleration
//! smoothness repeat this on first and second differences and are
//! reported as base-10 logs with a floor. Frame indices are the only
//! notion of time.

mod table;

pub use table::{compare_methods, plot_data_csv, ComparisonTable, MethodResults, MethodRow};

use serde::{Deserialize, Serialize};

use crate::kinematics::{fk_actuator, flatten_keypoints, HandModel, KinematicsError};
use crate::trajectory::{Trajectory, TrajectoryError};

/// Velocity and acceleration sums below this are reported at the floor.
pub const LOG_FLOOR: f64 = 1e-12;
/// A coordinate whose net change is at most this fraction of its largest
/// excursion cannot be normalized and is left out.
pub const DEGENERATE_TOL: f64 = 1e-9;
pub const MIN_FRAMES: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("smoothness needs at least {MIN_FRAMES} frames, trajectory `{id}` has {frames}")]
    TooShort { id: String, frames: usize },
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// Smoothness in one space (joints or keypoint coordinates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceSmoothness {
    pub pos: f64,
    pub vel_log: f64,
    pub acc_log: f64,
    pub vel_floored: bool,
    pub acc_floored: bool,
    /// Coordinates left out because they end where they start.
    pub excluded: Vec<usize>,
    /// True when every coordinate was excluded; the values are then NaN.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub id: String,
    pub frames: usize,
    pub joint: SpaceSmoothness,
    pub cartesian: SpaceSmoothness,
}

fn l1_neighbor_sum(series: &[Vec<f64>]) -> f64 {
    series
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (b - a).abs()).sum::<f64>())
        .sum()
}

fn differences(series: &[Vec<f64>]) -> Vec<Vec<f64>> {
    series
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| b - a).collect())
        .collect()
}

fn floored_log(v: f64) -> (f64, bool) {
    if v < LOG_FLOOR {
        (LOG_FLOOR.log10(), true)
    } else {
        (v.log10(), false)
    }
}

/// Per-coordinate normalization of `signal` (frames by coordinates).
/// Returns the kept coordinates' normalized series and the excluded
/// coordinate indices.
pub fn normalize(signal: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<usize>) {
    let width = signal.first().map_or(0, Vec::len);
    let (first, last) = match (signal.first(), signal.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return (Vec::new(), Vec::new()),
    };
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for j in 0..width {
        let span = last[j] - first[j];
        let reach = signal.iter().map(|f| (f[j] - first[j]).abs()).fold(0.0, f64::max);
        if span.abs() <= DEGENERATE_TOL * reach || !span.is_finite() {
            excluded.push(j);
        } else {
            kept.push((j, span));
        }
    }
    let normalized = signal
        .iter()
        .map(|f| kept.iter().map(|&(j, span)| (f[j] - first[j]) / span).collect())
        .collect();
    (normalized, excluded)
}

/// Smoothness of a raw signal, frames by coordinates.
pub fn signal_smoothness(signal: &[Vec<f64>]) -> SpaceSmoothness {
    let (norm, excluded) = normalize(signal);
    let count = norm.first().map_or(0, Vec::len);
    if count == 0 {
        return SpaceSmoothness {
            pos: f64::NAN,
            vel_log: f64::NAN,
            acc_log: f64::NAN,
            vel_floored: false,
            acc_floored: false,
            excluded,
            degenerate: true,
        };
    }
    let j = count as f64;
    let vel = differences(&norm);
    let acc = differences(&vel);
    let (vel_log, vel_floored) = floored_log(l1_neighbor_sum(&vel) / j);
    let (acc_log, acc_floored) = floored_log(l1_neighbor_sum(&acc) / j);
    SpaceSmoothness {
        pos: l1_neighbor_sum(&norm) / j,
        vel_log,
        acc_log,
        vel_floored,
        acc_floored,
        excluded,
        degenerate: false,
    }
}

/// Joint and keypoint smoothness of `trajectory` on `model`.
pub fn smoothness(trajectory: &Trajectory, model: &HandModel) -> Result<SmoothnessReport, MetricsError> {
    if trajectory.len() < MIN_FRAMES {
        return Err(MetricsError::TooShort {
            id: trajectory.id.clone(),
            frames: trajectory.len(),
        });
    }
    let act = trajectory.to_actuator()?;
    act.check_model(model)?;
    let cartesian: Vec<Vec<f64>> = act
        .frames
        .iter()
        .map(|q| fk_actuator(model, q).map(|kp| flatten_keypoints(&kp)))
        .collect::<Result<_, _>>()?;
    Ok(SmoothnessReport {
        id: trajectory.id.clone(),
        frames: trajectory.len(),
        joint: signal_smoothness(&act.frames),
        cartesian: signal_smoothness(&cartesian),
    })
}

#[cfg(test)]
mod tests;
