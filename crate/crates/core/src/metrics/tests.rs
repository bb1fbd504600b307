use super::*;
use crate::eval::{CostMeter, LogCost};
use crate::trajectory::{phase_grid, ConfigForm};
use proptest::prelude::*;

fn traj(frames: Vec<Vec<f64>>) -> Trajectory {
    Trajectory::new("t", "test", ConfigForm::Actuator, phase_grid(frames.len()), frames)
}

fn lerp(a: &[f64], b: &[f64], n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|k| {
            let s = k as f64 / (n - 1) as f64;
            a.iter().zip(b).map(|(x, y)| x + s * (y - x)).collect()
        })
        .collect()
}

fn two_configs() -> (HandModel, Vec<f64>, Vec<f64>) {
    let hand = HandModel::toy_allegro();
    let a = hand.lower.iter().zip(&hand.upper).map(|(l, u)| l + 0.2 * (u - l)).collect();
    let b = hand.lower.iter().zip(&hand.upper).map(|(l, u)| l + 0.7 * (u - l)).collect();
    (hand, a, b)
}

#[test]
fn linear_interpolation_has_unit_position_smoothness() {
    let (hand, a, b) = two_configs();
    let r = smoothness(&traj(lerp(&a, &b, 20)), &hand).unwrap();
    assert!((r.joint.pos - 1.0).abs() <= 1e-9, "{}", r.joint.pos);
    assert!(r.joint.vel_floored && r.joint.acc_floored);
    assert_eq!(r.joint.vel_log, -12.0);
    assert!(r.joint.excluded.is_empty());
    assert!(r.cartesian.pos >= 1.0 - 1e-9);
    assert_eq!(r.frames, 20);
}

#[test]
fn hand_worked_example() {
    let s = signal_smoothness(&[vec![0.0], vec![2.0], vec![1.0], vec![3.0]]);
    assert!((s.pos - 5.0 / 3.0).abs() < 1e-15);
    assert!((s.vel_log - 2f64.log10()).abs() < 1e-15);
    assert!((s.acc_log - 2f64.log10()).abs() < 1e-15);
    assert!(!s.vel_floored && !s.degenerate);
}

#[test]
fn monotone_paths_have_unit_position_smoothness() {
    let frames: Vec<Vec<f64>> = (0..30)
        .map(|k| {
            let t = k as f64 / 29.0;
            vec![t * t, t.sqrt() * 2.0 - 1.0, -(3.0 * t).tanh()]
        })
        .collect();
    let s = signal_smoothness(&frames);
    assert!((s.pos - 1.0).abs() < 1e-12);
    assert!(!s.vel_floored);
}

#[test]
fn constant_joint_is_excluded_and_flagged() {
    let mut frames = lerp(&[0.0, 1.0], &[1.0, 1.0], 6);
    let s = signal_smoothness(&frames);
    assert_eq!(s.excluded, [1]);
    assert!((s.pos - 1.0).abs() < 1e-12);
    for f in &mut frames {
        f[0] = 0.5;
    }
    let all = signal_smoothness(&frames);
    assert!(all.degenerate && all.pos.is_nan());
}

#[test]
fn needs_four_frames() {
    let (hand, a, b) = two_configs();
    assert!(matches!(
        smoothness(&traj(lerp(&a, &b, 3)), &hand),
        Err(MetricsError::TooShort { frames: 3, .. })
    ));
}

#[test]
fn timestamps_do_not_matter() {
    let (hand, a, mut b) = two_configs();
    b[8] = a[8] - 0.3;
    let mut frames = lerp(&a, &b, 12);
    frames[5][8] += 0.2;
    let t1 = traj(frames.clone());
    let mut t2 = traj(frames);
    t2.times = (0..12).map(|k| 100.0 - (k * k) as f64).collect();
    assert_eq!(smoothness(&t1, &hand).unwrap(), smoothness(&t2, &hand).unwrap());
}

fn report(id: &str, pos: f64, vel: f64, acc: f64) -> SmoothnessReport {
    let space = SpaceSmoothness {
        pos,
        vel_log: vel,
        acc_log: acc,
        vel_floored: false,
        acc_floored: false,
        excluded: Vec::new(),
        degenerate: false,
    };
    SmoothnessReport {
        id: id.into(),
        frames: 20,
        joint: space.clone(),
        cartesian: SpaceSmoothness { pos: pos + 1.0, ..space },
    }
}

fn results() -> Vec<MethodResults> {
    let mut cem = CostMeter::new();
    cem.add_env_steps(5000);
    let mut rrt = CostMeter::new();
    rrt.add_collision_checks(20_000);
    rrt.add_successes(1);
    vec![
        MethodResults {
            method: "rrt".into(),
            object: "sphere".into(),
            reports: vec![report("r", 1.5, -1.0, -0.5)],
            meter: Some(rrt),
        },
        MethodResults {
            method: "cem".into(),
            object: "sphere".into(),
            reports: vec![report("c1", 2.0, 0.0, 1.0), report("c2", 4.0, 1.0, 2.0)],
            meter: Some(cem),
        },
        MethodResults {
            method: "linear".into(),
            object: "sphere".into(),
            reports: vec![report("l", 1.0, -12.0, -12.0)],
            meter: None,
        },
    ]
}

#[test]
fn single_trajectory_cells_equal_the_report() {
    let table = compare_methods(&results()).unwrap();
    let rrt = table.row("rrt", "sphere").unwrap();
    assert_eq!((rrt.joint_pos, rrt.joint_vel_log, rrt.joint_acc_log), (1.5, -1.0, -0.5));
    assert_eq!(rrt.cartesian_pos, 2.5);
    assert_eq!(rrt.joint_count, 1);
    let cem = table.row("cem", "sphere").unwrap();
    assert_eq!((cem.joint_pos, cem.joint_count, cem.trajectories), (3.0, 2, 2));
    assert!((rrt.cost_per_success_log.unwrap().value().unwrap() - 4.30103).abs() < 1e-5);
}

#[test]
fn zero_successes_render_as_dash() {
    let table = compare_methods(&results()).unwrap();
    assert_eq!(table.row("cem", "sphere").unwrap().cost_per_success_log, Some(LogCost::Infinite));
    let csv = table.cost_csv();
    assert!(csv.lines().any(|l| l.starts_with("cem,sphere,") && l.ends_with(",-")), "{csv}");
    assert!(!csv.contains("linear"));
    assert!(table.smoothness_csv().contains("linear,sphere,1,1.000000,-12.000000"));
    assert!(serde_json::to_string(&table).unwrap().contains("\"inf\""));
}

#[test]
fn method_order_does_not_matter() {
    let mut r = results();
    let a = compare_methods(&r).unwrap();
    r.reverse();
    assert_eq!(a, compare_methods(&r).unwrap());
    r.rotate_left(1);
    assert_eq!(a.smoothness_csv(), compare_methods(&r).unwrap().smoothness_csv());
}

#[test]
fn comparison_needs_two_distinct_methods() {
    let r = results();
    assert!(compare_methods(&r[..1]).is_err());
    assert!(compare_methods(&[r[0].clone(), r[0].clone()]).is_err());
}

#[test]
fn plot_data_lists_normalized_series() {
    let t = traj(lerp(&[0.0, 2.0], &[1.0, 2.0], 5));
    let csv = plot_data_csv(&[("linear", &t)]).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[5], "linear,t,4,0,1.000000");
}

fn signal(frames: usize, width: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0..2.0f64, width), frames)
}

proptest! {
    #[test]
    fn affine_maps_leave_smoothness_unchanged(
        raw in signal(8, 3),
        slopes in prop::collection::vec(0.1..10.0f64, 3),
        flips in prop::collection::vec(any::<bool>(), 3),
        offsets in prop::collection::vec(-5.0..5.0f64, 3),
    ) {
        let mapped: Vec<Vec<f64>> = raw
            .iter()
            .map(|f| (0..3).map(|j| {
                let a = if flips[j] { -slopes[j] } else { slopes[j] };
                a * f[j] + offsets[j]
            }).collect())
            .collect();
        let (s, m) = (signal_smoothness(&raw), signal_smoothness(&mapped));
        prop_assume!(!s.degenerate && s.excluded.is_empty());
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-7 * (1.0 + a.abs());
        prop_assert!(close(s.pos, m.pos));
        prop_assert!(close(s.vel_log, m.vel_log));
        prop_assert!(close(s.acc_log, m.acc_log));
    }

    #[test]
    fn position_smoothness_is_at_least_one(raw in signal(10, 2), sorted in any::<bool>()) {
        let mut frames = raw;
        if sorted {
            for j in 0..2 {
                let mut col: Vec<f64> = frames.iter().map(|f| f[j]).collect();
                col.sort_by(f64::total_cmp);
                for (f, v) in frames.iter_mut().zip(col) {
                    f[j] = v;
                }
            }
        }
        let s = signal_smoothness(&frames);
        prop_assume!(!s.degenerate && s.excluded.is_empty());
        prop_assert!(s.pos >= 1.0 - 1e-12);
        let (norm, _) = normalize(&frames);
        let monotone = (0..2).all(|j| {
            norm.windows(2).all(|w| w[1][j] >= w[0][j]) || norm.windows(2).all(|w| w[1][j] <= w[0][j])
        });
        if monotone {
            prop_assert!((s.pos - 1.0).abs() < 1e-9);
        } else {
            prop_assert!(s.pos > 1.0 + 1e-12);
        }
    }
}
