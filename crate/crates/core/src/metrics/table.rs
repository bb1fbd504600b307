use std::fmt::Write;

use serde::Serialize;

use super::{normalize, MetricsError, SmoothnessReport, SpaceSmoothness, LOG_FLOOR};
use crate::eval::{CostMeter, LogCost};
use crate::trajectory::Trajectory;

/// Everything measured for one method on one object.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodResults {
    pub method: String,
    pub object: String,
    pub reports: Vec<SmoothnessReport>,
    /// Work and successes; absent for methods without a cost, such as
    /// linear interpolation.
    pub meter: Option<CostMeter>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodRow {
    pub method: String,
    pub object: String,
    pub trajectories: usize,
    pub joint_pos: f64,
    pub joint_vel_log: f64,
    pub joint_acc_log: f64,
    /// Trajectories contributing to the joint cells.
    pub joint_count: usize,
    pub cartesian_pos: f64,
    pub cartesian_vel_log: f64,
    pub cartesian_acc_log: f64,
    pub cartesian_count: usize,
    pub successes: Option<u64>,
    pub env_steps: Option<u64>,
    pub collision_checks: Option<u64>,
    pub cost_per_success_log: Option<LogCost>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub joint_aggregation: &'static str,
    pub log_base: &'static str,
    pub log_floor: f64,
    pub rows: Vec<MethodRow>,
}

fn mean_cells(spaces: &[&SpaceSmoothness]) -> ([f64; 3], usize) {
    let used: Vec<_> = spaces.iter().filter(|s| !s.degenerate).collect();
    if used.is_empty() {
        return ([f64::NAN; 3], 0);
    }
    let n = used.len() as f64;
    let mut sums = [0.0; 3];
    for s in &used {
        sums[0] += s.pos;
        sums[1] += s.vel_log;
        sums[2] += s.acc_log;
    }
    (sums.map(|v| v / n), used.len())
}

/// One row per (method, object), averaging each cell over the
/// non-degenerate trajectories. Rows are sorted by method then object, so
/// the input order does not matter.
pub fn compare_methods(results: &[MethodResults]) -> Result<ComparisonTable, MetricsError> {
    if results.len() < 2 {
        return Err(MetricsError::Input("a comparison needs at least two methods".into()));
    }
    let mut rows: Vec<MethodRow> = results
        .iter()
        .map(|r| {
            let joints: Vec<_> = r.reports.iter().map(|x| &x.joint).collect();
            let carts: Vec<_> = r.reports.iter().map(|x| &x.cartesian).collect();
            let (j, joint_count) = mean_cells(&joints);
            let (c, cartesian_count) = mean_cells(&carts);
            MethodRow {
                method: r.method.clone(),
                object: r.object.clone(),
                trajectories: r.reports.len(),
                joint_pos: j[0],
                joint_vel_log: j[1],
                joint_acc_log: j[2],
                joint_count,
                cartesian_pos: c[0],
                cartesian_vel_log: c[1],
                cartesian_acc_log: c[2],
                cartesian_count,
                successes: r.meter.map(|m| m.successes()),
                env_steps: r.meter.map(|m| m.env_steps()),
                collision_checks: r.meter.map(|m| m.collision_checks()),
                cost_per_success_log: r.meter.map(|m| m.log_cost_per_success()),
            }
        })
        .collect();
    rows.sort_by(|a, b| a.method.cmp(&b.method).then(a.object.cmp(&b.object)));
    if rows.windows(2).any(|w| w[0].method == w[1].method && w[0].object == w[1].object) {
        return Err(MetricsError::Input("duplicate (method, object) entry".into()));
    }
    Ok(ComparisonTable {
        joint_aggregation: "mean-over-coordinates",
        log_base: "log10",
        log_floor: LOG_FLOOR,
        rows,
    })
}

fn cell(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        String::new()
    }
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(String::new, T::to_string)
}

impl ComparisonTable {
    pub fn smoothness_csv(&self) -> String {
        let mut out = String::from(
            "method,object,trajectories,joint_pos_mean,joint_vel_log10_mean,joint_acc_log10_mean,joint_count,\
             cartesian_pos_mean,cartesian_vel_log10_mean,cartesian_acc_log10_mean,cartesian_count\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.method,
                r.object,
                r.trajectories,
                cell(r.joint_pos),
                cell(r.joint_vel_log),
                cell(r.joint_acc_log),
                r.joint_count,
                cell(r.cartesian_pos),
                cell(r.cartesian_vel_log),
                cell(r.cartesian_acc_log),
                r.cartesian_count
            );
        }
        out
    }

    /// Cost rows for methods that carry a meter; zero successes print `-`.
    pub fn cost_csv(&self) -> String {
        let mut out = String::from("method,object,trajectories,successes,env_steps,collision_checks,cost_per_success_log10\n");
        for r in self.rows.iter().filter(|r| r.cost_per_success_log.is_some()) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.method,
                r.object,
                r.trajectories,
                opt(&r.successes),
                opt(&r.env_steps),
                opt(&r.collision_checks),
                opt(&r.cost_per_success_log)
            );
        }
        out
    }

    pub fn row(&self, method: &str, object: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method && r.object == object)
    }
}

/// Long-format per-frame series of the normalized joint coordinates:
/// `method,trajectory,frame,coordinate,value`.
pub fn plot_data_csv(entries: &[(&str, &Trajectory)]) -> Result<String, MetricsError> {
    let mut out = String::from("method,trajectory,frame,coordinate,value\n");
    for (method, traj) in entries {
        let act = traj.to_actuator()?;
        let width = act.frames.first().map_or(0, Vec::len);
        let (norm, excluded) = normalize(&act.frames);
        let kept: Vec<usize> = (0..width).filter(|j| !excluded.contains(j)).collect();
        for (k, frame) in norm.iter().enumerate() {
            for (j, v) in kept.iter().zip(frame) {
                let _ = writeln!(out, "{method},{},{k},{j},{v:.6}", traj.id);
            }
        }
    }
    Ok(out)
}
