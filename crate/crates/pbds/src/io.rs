//! Trajectory CSV, reference CSV and metrics JSON.

use std::io::Write;

use pbds_core::sim::{ReferenceSample, RunMetrics, TrajectoryRecord};
use serde::Serialize;

/// Column names of the trajectory log.
pub fn trajectory_header(n: usize, n_tau: usize, n_obstacles: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..n).map(|i| format!("q{i}")));
    h.extend((0..n).map(|i| format!("qd{i}")));
    h.extend((0..n_tau).map(|i| format!("tau{i}")));
    h.extend(["ee_x", "ee_y", "ee_z"].map(String::from));
    h.extend((0..n).map(|i| format!("qdd_d_{i}")));
    h.extend(["slack_norm", "kkt_stat", "kkt_eq", "kkt_ineq", "active_set"].map(String::from));
    h.extend((0..n_obstacles).map(|i| format!("obs_dist_{i}")));
    h
}

fn num(x: f64) -> String {
    format!("{x}")
}

pub fn write_trajectory<W: Write>(out: W, records: &[TrajectoryRecord], n_obstacles: usize) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let (n, n_tau) = records.first().map_or((0, 0), |r| (r.q.len(), r.tau.len()));
    w.write_record(trajectory_header(n, n_tau, n_obstacles))?;
    for r in records {
        let mut row = vec![num(r.t)];
        row.extend(r.q.iter().copied().map(num));
        row.extend(r.qd.iter().copied().map(num));
        row.extend(r.tau.iter().copied().map(num));
        row.extend(r.ee.iter().copied().map(num));
        row.extend(r.qdd_d.iter().copied().map(num));
        row.push(num(r.slack_norm));
        row.push(num(r.kkt.stationarity));
        row.push(num(r.kkt.equality));
        row.push(num(r.kkt.inequality));
        row.push(r.active_set.to_string());
        for k in 0..n_obstacles {
            row.push(r.obstacle_distances.get(k).map_or_else(|| "nan".to_string(), |d| num(*d)));
        }
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// `t,chart,x0..,v0..,e0..` with `e` the ambient point.
pub fn write_reference<W: Write>(out: W, samples: &[ReferenceSample]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let (d, e) = samples.first().map_or((0, 0), |s| (s.x.len(), s.embedded.len()));
    let mut h = vec!["t".to_string(), "chart".to_string()];
    h.extend((0..d).map(|i| format!("x{i}")));
    h.extend((0..d).map(|i| format!("v{i}")));
    h.extend((0..e).map(|i| format!("e{i}")));
    w.write_record(&h)?;
    for s in samples {
        let mut row = vec![num(s.t), s.chart.name().to_string()];
        row.extend(s.x.iter().copied().map(num));
        row.extend(s.v.iter().copied().map(num));
        row.extend(s.embedded.iter().copied().map(num));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsDocument<'a> {
    pub scenario: &'a str,
    pub ee_rmse: Option<f64>,
    pub ee_rmse_final: Option<f64>,
    pub sphere_violation: Option<f64>,
    pub sphere_radial_error: Option<f64>,
    pub min_obstacle_clearance: Option<f64>,
    pub final_attractor_distance: Option<f64>,
    pub torque_limit_activations: usize,
    pub solver_failures: usize,
    pub held_torque_ticks: usize,
    pub tree_error_ticks: usize,
    pub max_torque_excess: f64,
    pub mean_solve_time: f64,
    pub max_solve_time: f64,
    pub ticks: usize,
    pub completed: bool,
}

impl<'a> MetricsDocument<'a> {
    pub fn new(scenario: &'a str, m: &RunMetrics) -> Self {
        Self {
            scenario,
            ee_rmse: m.ee_rmse,
            ee_rmse_final: m.ee_rmse_final,
            sphere_violation: m.sphere_violation,
            sphere_radial_error: m.sphere_radial_error,
            min_obstacle_clearance: m.min_obstacle_clearance,
            final_attractor_distance: m.final_attractor_distance,
            torque_limit_activations: m.torque_limit_activations,
            solver_failures: m.solver_failures,
            held_torque_ticks: m.held_torque_ticks,
            tree_error_ticks: m.tree_error_ticks,
            max_torque_excess: m.max_torque_excess,
            mean_solve_time: m.mean_solve_time,
            max_solve_time: m.max_solve_time,
            ticks: m.ticks,
            completed: m.completed,
        }
    }
}

pub fn write_metrics<W: Write>(mut out: W, doc: &MetricsDocument<'_>) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut out, doc)?;
    out.write_all(b"\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let h = trajectory_header(2, 2, 1).join(",");
        assert_eq!(
            h,
            "t,q0,q1,qd0,qd1,tau0,tau1,ee_x,ee_y,ee_z,qdd_d_0,qdd_d_1,slack_norm,kkt_stat,kkt_eq,kkt_ineq,active_set,obs_dist_0"
        );
    }

    #[test]
    fn metrics_use_snake_case_and_null_for_missing() {
        let m = RunMetrics {
            ticks: 3,
            completed: true,
            ..RunMetrics::default()
        };
        let mut buf = Vec::new();
        write_metrics(&mut buf, &MetricsDocument::new("x", &m)).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["ticks"], 3);
        assert!(v["ee_rmse"].is_null());
        assert_eq!(v["torque_limit_activations"], 0);
    }
}
