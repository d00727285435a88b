//! Closed loop of tree, QP controller and plant; task-space reference
//! rollouts; per-tick records and run metrics.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::ds::DsState;
use crate::error::{Error, Result};
use crate::manifolds::Chart;
use crate::pbds::{NodePayload, PbdsTree, TaskField, TaskRole};
use crate::qp::{Controller, ControllerConfig, KktReport, QpStatus};
use crate::robot::{JointState, RobotModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Integrator {
    SemiImplicitEuler,
    Rk4,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub duration: f64,
    pub integrator: Integrator,
    pub log_stride: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            duration: 10.0,
            integrator: Integrator::SemiImplicitEuler,
            log_stride: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter("dt must be positive".into()));
        }
        if !(self.duration >= self.dt && self.duration.is_finite()) {
            return Err(Error::InvalidParameter("duration must be at least dt".into()));
        }
        if self.log_stride == 0 {
            return Err(Error::InvalidParameter("log stride must be positive".into()));
        }
        Ok(())
    }

    /// Number of control ticks in the run.
    pub fn steps(&self) -> usize {
        libm::round(self.duration / self.dt) as usize
    }

    pub fn time(&self, tick: usize) -> f64 {
        tick as f64 * self.dt
    }
}

/// Monotonic time source in seconds, used only for solver timing.
pub trait Clock {
    fn now(&self) -> f64;
}

/// A clock that never advances.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn now(&self) -> f64 {
        0.0
    }
}

fn finite_state(s: &JointState) -> Result<JointState> {
    if s.is_finite() {
        Ok(s.clone())
    } else {
        Err(Error::NonFinite("plant state"))
    }
}

/// Advances the plant by one period with the torque held constant.
pub fn step_plant(
    model: &RobotModel,
    state: &JointState,
    tau: &DVector<f64>,
    dt: f64,
    integrator: Integrator,
) -> Result<JointState> {
    if !tau.iter().all(|t| t.is_finite()) {
        return Err(Error::NonFinite("torque"));
    }
    match integrator {
        Integrator::SemiImplicitEuler => {
            let qdd = model.forward_dynamics(state, tau)?;
            let qd = &state.qd + qdd * dt;
            let q = &state.q + &qd * dt;
            finite_state(&JointState::new(q, qd))
        }
        Integrator::Rk4 => {
            let f = |s: &JointState| -> Result<(DVector<f64>, DVector<f64>)> {
                Ok((s.qd.clone(), model.forward_dynamics(s, tau)?))
            };
            let shift = |k: &(DVector<f64>, DVector<f64>), h: f64| {
                JointState::new(&state.q + &k.0 * h, &state.qd + &k.1 * h)
            };
            let k1 = f(state)?;
            let k2 = f(&shift(&k1, 0.5 * dt))?;
            let k3 = f(&shift(&k2, 0.5 * dt))?;
            let k4 = f(&shift(&k3, dt))?;
            let q = &state.q + (k1.0 + k2.0 * 2.0 + k3.0 * 2.0 + k4.0) * (dt / 6.0);
            let qd = &state.qd + (k1.1 + k2.1 * 2.0 + k3.1 * 2.0 + k4.1) * (dt / 6.0);
            finite_state(&JointState::new(q, qd))
        }
    }
}

/// One task-space reference sample. `x` and `v` are in `chart`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSample {
    pub t: f64,
    pub chart: Chart,
    pub x: DVector<f64>,
    pub v: DVector<f64>,
    /// Ambient point, or `x` itself for Euclidean charts.
    pub embedded: DVector<f64>,
}

/// Chart to hand over to when the state nears a chart singularity.
fn handover(chart: &Chart, x: &DVector<f64>) -> Option<Chart> {
    match chart {
        Chart::SphereSpherical if x[0] > core::f64::consts::PI - 0.3 => Some(Chart::SphereStereographic),
        Chart::SphereStereographic if x.norm() > 2.0 => Some(Chart::SphereSpherical),
        _ => None,
    }
}

fn step_field(field: &TaskField, s: &DsState, dt: f64, integrator: Integrator) -> Result<DsState> {
    let out = match integrator {
        Integrator::SemiImplicitEuler => {
            let a = field.acceleration(s)?;
            let v = &s.v + a * dt;
            DsState::new(&s.x + &v * dt, v)
        }
        Integrator::Rk4 => {
            let f = |st: &DsState| -> Result<(DVector<f64>, DVector<f64>)> {
                Ok((st.v.clone(), field.acceleration(st)?))
            };
            let shift = |k: &(DVector<f64>, DVector<f64>), h: f64| DsState::new(&s.x + &k.0 * h, &s.v + &k.1 * h);
            let k1 = f(s)?;
            let k2 = f(&shift(&k1, 0.5 * dt))?;
            let k3 = f(&shift(&k2, 0.5 * dt))?;
            let k4 = f(&shift(&k3, dt))?;
            DsState::new(
                &s.x + (k1.0 + k2.0 * 2.0 + k3.0 * 2.0 + k4.0) * (dt / 6.0),
                &s.v + (k1.1 + k2.1 * 2.0 + k3.1 * 2.0 + k4.1) * (dt / 6.0),
            )
        }
    };
    if out.x.iter().chain(out.v.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("reference state"));
    }
    field.chart().check_point(out.x.as_slice())?;
    Ok(out)
}

fn embedded(chart: &Chart, x: &DVector<f64>) -> Result<DVector<f64>> {
    match chart {
        Chart::Euclidean { .. } | Chart::HalfLine { .. } => Ok(x.clone()),
        _ => chart.embed(x),
    }
}

/// Integrates a task-space system on its own chart, one sample per tick
/// including `t = 0`. Sphere systems built from chart-invariant terms move to
/// the other sphere chart near a coordinate singularity.
pub fn reference_rollout(field: &TaskField, init: &DsState, sim: &SimConfig) -> Result<Vec<ReferenceSample>> {
    sim.validate()?;
    let mut field = field.clone();
    field.chart().check_point(init.x.as_slice())?;
    if init.v.len() != field.chart().dim() {
        return Err(Error::dim("reference velocity", field.chart().dim(), init.v.len()));
    }
    let mut s = init.clone();
    let steps = sim.steps();
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        if let Some(next) = handover(field.chart(), &s.x) {
            if let Ok(moved) = field.in_chart(next.clone()) {
                let (x, v) = field.chart().transfer_state(&next, &s.x, &s.v)?;
                field = moved;
                s = DsState::new(x, v);
            }
        }
        out.push(ReferenceSample {
            t: sim.time(k),
            chart: field.chart().clone(),
            embedded: embedded(field.chart(), &s.x)?,
            x: s.x.clone(),
            v: s.v.clone(),
        });
        if k < steps {
            s = step_field(&field, &s, sim.dt, sim.integrator)?;
        }
    }
    Ok(out)
}

/// What the run compares against and how task distances are scaled.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    /// Node whose subtree defines the tracking reference.
    pub tracked_node: Option<String>,
    /// Metres per task unit for tracking errors and obstacle distances.
    pub length_scale: f64,
    /// Sphere the end effector should stay on: `(center, radius)`.
    pub sphere: Option<([f64; 3], f64)>,
    /// Length of the final window for the windowed RMSE (s).
    pub rmse_window: f64,
    /// First tick index, for resuming a run from a logged state.
    pub start_tick: usize,
    /// Initial torque held if the very first tick is infeasible.
    pub initial_torque: Option<DVector<f64>>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            tracked_node: None,
            length_scale: 1.0,
            sphere: None,
            rmse_window: 2.0,
            start_tick: 0,
            initial_torque: None,
        }
    }
}

/// One logged control tick.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub tick: usize,
    pub t: f64,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub qdd: DVector<f64>,
    pub tau: DVector<f64>,
    pub ee: [f64; 3],
    pub qdd_d: DVector<f64>,
    pub slack_norm: f64,
    pub kkt: KktReport,
    pub active_set: usize,
    pub status: QpStatus,
    pub tree_ok: bool,
    /// Obstacle-node distances, scaled to metres.
    pub obstacle_distances: Vec<f64>,
    /// Tracked-node point in its chart's embedding, if tracking.
    pub tracked: Option<DVector<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    /// End-effector tracking RMSE against the reference over the run (m).
    pub ee_rmse: Option<f64>,
    /// Same, over the final `rmse_window` seconds (m).
    pub ee_rmse_final: Option<f64>,
    /// Largest `|‖embed(x)‖ − 1|` along the sphere reference.
    pub sphere_violation: Option<f64>,
    /// Largest `|‖ee − c‖ − R|` of the simulated end effector (m).
    pub sphere_radial_error: Option<f64>,
    pub min_obstacle_clearance: Option<f64>,
    /// Distance of the first attractor leaf to its target at the end of the run.
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

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub records: Vec<TrajectoryRecord>,
    pub metrics: RunMetrics,
    pub reference: Option<Vec<ReferenceSample>>,
    /// State after the last completed tick.
    pub final_state: JointState,
    /// Set when the run stopped early on a non-finite state.
    pub abort: Option<Error>,
}

/// Stacks the first-level task nodes into the QP task row.
/// Damping nodes only shape `q̈_d`.
fn task_row(res: &crate::pbds::Resolution, n: usize) -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let rows: Vec<_> = res.first_level.iter().filter(|r| r.role != TaskRole::Damping).collect();
    let s: usize = rows.iter().map(|r| r.desired_acceleration.len()).sum();
    let mut xdd = DVector::zeros(s);
    let mut j = DMatrix::zeros(s, n);
    let mut jdq = DVector::zeros(s);
    let mut at = 0;
    for r in rows {
        let k = r.desired_acceleration.len();
        xdd.rows_mut(at, k).copy_from(&r.desired_acceleration);
        j.view_mut((at, 0), (k, n)).copy_from(&r.jacobian);
        jdq.rows_mut(at, k).copy_from(&r.jdot_qd);
        at += k;
    }
    (xdd, j, jdq)
}

fn ee_point(model: &RobotModel, q: &DVector<f64>) -> [f64; 3] {
    let pts = model.points_generic(q.as_slice());
    let off = 3 * model.dof();
    [pts[off], pts[off + 1], pts[off + 2]]
}

/// Node and the chart the tracked subtree lives in, found by name.
fn tracked_field(tree: &PbdsTree, name: &str) -> Result<TaskField> {
    let node = tree
        .find(name)
        .ok_or_else(|| Error::InvalidParameter(alloc::format!("no task node named {name}")))?;
    Ok(node.task_space_field(tree.regularization))
}

/// Runs the closed loop: tree → QP → plant, for `sim.steps()` ticks.
pub fn run_closed_loop(
    model: &RobotModel,
    tree: &PbdsTree,
    cfg: &ControllerConfig,
    sim: &SimConfig,
    init: &JointState,
    opts: &RunOptions,
    clock: &dyn Clock,
) -> Result<RunOutput> {
    model.validate()?;
    sim.validate()?;
    tree.validate()?;
    let n = model.dof();
    if tree.dim() != n {
        return Err(Error::dim("tree base", n, tree.dim()));
    }
    if init.q.len() != n || init.qd.len() != n || !init.is_finite() {
        return Err(Error::dim("initial state", n, init.q.len()));
    }
    if !(opts.length_scale > 0.0) {
        return Err(Error::InvalidParameter("length scale must be positive".into()));
    }
    let mut ctl = Controller::new(model, cfg.clone())?;
    if let Some(t) = &opts.initial_torque {
        ctl.hold(t.clone());
    }
    let tracked = match &opts.tracked_node {
        Some(name) => Some((name.clone(), tracked_field(tree, name)?)),
        None => None,
    };

    let steps = sim.steps();
    let mut records = Vec::new();
    let mut state = init.clone();
    let mut metrics = RunMetrics::default();
    let mut solve_total = 0.0;
    let mut track_init: Option<DsState> = None;
    let mut tracked_points: Vec<(usize, DVector<f64>)> = Vec::new();
    let mut abort = None;

    for tick in opts.start_tick..steps {
        let base = DsState::new(state.q.clone(), state.qd.clone());
        let resolution = tree.resolve_detailed(&base);
        let (tau, qdd_d, diag, tree_ok, obstacles, tracked_x) = match resolution {
            Ok(res) => {
                let (xdd, j, jdq) = task_row(&res, n);
                let t0 = clock.now();
                let (tau, diag) = ctl.control_tick(model, &state, &res.qdd, &xdd, &j, &jdq)?;
                let dt_solve = (clock.now() - t0).max(0.0);
                solve_total += dt_solve;
                metrics.max_solve_time = metrics.max_solve_time.max(dt_solve);
                let obstacles: Vec<f64> = res
                    .nodes
                    .iter()
                    .filter(|r| r.role == TaskRole::Obstacle)
                    .map(|r| r.state.x[0] * opts.length_scale)
                    .collect();
                let mut tx = None;
                if let Some((name, field)) = &tracked {
                    if let Some(r) = res.node(name) {
                        if track_init.is_none() {
                            track_init = Some(r.state.clone());
                        }
                        tx = embedded(field.chart(), &r.state.x).ok();
                    }
                }
                (tau, res.qdd, Some(diag), true, obstacles, tx)
            }
            Err(_) => {
                metrics.tree_error_ticks += 1;
                (ctl.last_torque().clone(), DVector::zeros(n), None, false, Vec::new(), None)
            }
        };
        let status = diag.as_ref().map_or(QpStatus::Infeasible, |d| d.status);
        if let Some(d) = &diag {
            if d.status != QpStatus::Solved {
                metrics.solver_failures += 1;
            }
            if d.held {
                metrics.held_torque_ticks += 1;
            }
            if d.torque_limited {
                metrics.torque_limit_activations += 1;
            }
        }
        for (j, t) in tau.iter().enumerate() {
            metrics.max_torque_excess = metrics.max_torque_excess.max(t.abs() - model.limits.tau_max[j]);
        }
        if let Some(d) = obstacles.iter().copied().reduce(f64::min) {
            metrics.min_obstacle_clearance = Some(metrics.min_obstacle_clearance.map_or(d, |m: f64| m.min(d)));
        }
        let ee = ee_point(model, &state.q);
        if let Some((c, r)) = opts.sphere {
            let dist = libm::sqrt((0..3).map(|i| (ee[i] - c[i]) * (ee[i] - c[i])).sum::<f64>());
            let e = (dist - r).abs();
            metrics.sphere_radial_error = Some(metrics.sphere_radial_error.map_or(e, |m: f64| m.max(e)));
        }
        if let Some(x) = &tracked_x {
            tracked_points.push((tick, x.clone()));
        }
        let qdd = model.forward_dynamics(&state, &tau)?;
        if (tick - opts.start_tick) % sim.log_stride == 0 {
            records.push(TrajectoryRecord {
                tick,
                t: sim.time(tick),
                q: state.q.clone(),
                qd: state.qd.clone(),
                qdd,
                tau: tau.clone(),
                ee,
                qdd_d,
                slack_norm: diag.as_ref().map_or(0.0, |d| d.slack_norm),
                kkt: diag.as_ref().map_or(KktReport::default(), |d| d.kkt),
                active_set: diag.as_ref().map_or(0, |d| d.active_set.len()),
                status,
                tree_ok,
                obstacle_distances: obstacles,
                tracked: tracked_x,
            });
        }
        metrics.ticks += 1;
        match step_plant(model, &state, &tau, sim.dt, sim.integrator) {
            Ok(s) => state = s,
            Err(e) => {
                abort = Some(e);
                break;
            }
        }
    }
    metrics.completed = abort.is_none();
    if metrics.ticks > 0 {
        metrics.mean_solve_time = solve_total / metrics.ticks as f64;
    }
    metrics.final_attractor_distance = final_attractor_distance(tree, &state);

    let mut reference = None;
    if let (Some((_, field)), Some(init)) = (&tracked, &track_init) {
        let ref_sim = SimConfig {
            duration: sim.time(steps - opts.start_tick).max(sim.dt),
            ..*sim
        };
        let samples = reference_rollout(field, init, &ref_sim)?;
        let (mut sum, mut count, mut sum_w, mut count_w) = (0.0, 0usize, 0.0, 0usize);
        let window_start = sim.time(steps) - opts.rmse_window;
        for (tick, x) in &tracked_points {
            let Some(r) = samples.get(tick - opts.start_tick) else { continue };
            let e2 = ((x - &r.embedded) * opts.length_scale).norm_squared();
            sum += e2;
            count += 1;
            if sim.time(*tick) >= window_start - 1e-12 {
                sum_w += e2;
                count_w += 1;
            }
        }
        if count > 0 {
            metrics.ee_rmse = Some(libm::sqrt(sum / count as f64));
        }
        if count_w > 0 {
            metrics.ee_rmse_final = Some(libm::sqrt(sum_w / count_w as f64));
        }
        if field.chart().is_sphere() {
            metrics.sphere_violation = Some(
                samples
                    .iter()
                    .map(|s| (s.embedded.norm() - 1.0).abs())
                    .fold(0.0, f64::max),
            );
        }
        reference = Some(samples);
    }
    Ok(RunOutput {
        records,
        metrics,
        reference,
        final_state: state,
        abort,
    })
}

fn final_attractor_distance(tree: &PbdsTree, state: &JointState) -> Option<f64> {
    let res = tree.resolve_detailed(&DsState::new(state.q.clone(), state.qd.clone())).ok()?;
    let leaves = tree.leaf_nodes();
    for leaf in leaves.iter().filter(|l| l.role == TaskRole::Attractor) {
        if let (NodePayload::Leaf(ds), Some(r)) = (&leaf.payload, res.node(&leaf.name)) {
            if let Some(d) = ds.potential().target_distance(ds.chart(), &r.state.x) {
                return Some(d);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ds::{Dissipation, Potential, SecondOrderDS};
    use crate::pbds::{TaskMap, TaskNode};
    use alloc::vec;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn free_drift_without_gravity() {
        let mut model = RobotModel::preset("planar2").unwrap();
        model.gravity = [0.0; 3];
        let s = JointState::from_slices(&[0.1, 0.2], &[1.0, 0.0]);
        let dt = 1e-3;
        let next = step_plant(&model, &s, &DVector::zeros(2), dt, Integrator::SemiImplicitEuler).unwrap();
        // q̈ = −M⁻¹h is O(q̇²); q moves by dt·q̇ to first order.
        assert!((next.q[0] - (0.1 + dt)).abs() < 1e-5);
    }

    #[test]
    fn semi_implicit_update_rule() {
        let mut model = RobotModel::preset("planar1").unwrap();
        model.gravity = [0.0; 3];
        // Unit inertia about the joint.
        model.masses = vec![1.0];
        let s = JointState::from_slices(&[0.4], &[0.0]);
        let dt = 0.01;
        let next = step_plant(&model, &s, &v(&[1.0]), dt, Integrator::SemiImplicitEuler).unwrap();
        assert!((next.qd[0] - dt).abs() < 1e-15);
        assert!((next.q[0] - (0.4 + dt * dt)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_torque_is_rejected() {
        let model = RobotModel::preset("planar1").unwrap();
        let s = JointState::from_slices(&[0.0], &[0.0]);
        assert!(step_plant(&model, &s, &v(&[f64::NAN]), 1e-3, Integrator::Rk4).is_err());
    }

    #[test]
    fn reference_at_rest_on_the_attractor_stays_put() {
        let ds = SecondOrderDS::new(
            Chart::Euclidean { dim: 2 },
            Potential::Quadratic { target: v(&[0.3, 0.1]), stiffness: 4.0 },
            Dissipation::Constant { gain: 2.0 },
        )
        .unwrap();
        let sim = SimConfig { duration: 1.0, ..SimConfig::default() };
        let out = reference_rollout(&TaskField::Ds(ds), &DsState::from_slices(&[0.3, 0.1], &[0.0, 0.0]), &sim).unwrap();
        assert_eq!(out.len(), 1001);
        assert!(out.iter().all(|s| s.x == v(&[0.3, 0.1])));
    }

    #[test]
    fn reference_hands_over_near_the_south_pole() {
        let ds = SecondOrderDS::new(Chart::SphereSpherical, Potential::Zero, Dissipation::None).unwrap();
        let sim = SimConfig {
            duration: 1.0,
            integrator: Integrator::Rk4,
            ..SimConfig::default()
        };
        let out = reference_rollout(&TaskField::Ds(ds), &DsState::from_slices(&[2.5, 0.3], &[1.0, 0.0]), &sim).unwrap();
        assert!(out.iter().any(|s| s.chart == Chart::SphereStereographic));
        assert!(out.iter().all(|s| (s.embedded.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn joint_attractor_closed_loop_converges() {
        let model = RobotModel::preset("planar2").unwrap();
        let target = v(&[0.5, -0.3]);
        let ds = SecondOrderDS::new(
            Chart::Euclidean { dim: 2 },
            Potential::Quadratic { target: target.clone(), stiffness: 25.0 },
            Dissipation::Constant { gain: 10.0 },
        )
        .unwrap();
        let tree = PbdsTree::new(2, vec![TaskNode::leaf("goal", TaskMap::Identity, ds, DMatrix::identity(2, 2))]).unwrap();
        let cfg = ControllerConfig::default_for(2, 2, 1e-3);
        let sim = SimConfig { duration: 3.0, log_stride: 100, ..SimConfig::default() };
        let out = run_closed_loop(
            &model,
            &tree,
            &cfg,
            &sim,
            &JointState::from_slices(&[0.0, 0.0], &[0.0, 0.0]),
            &RunOptions::default(),
            &NullClock,
        )
        .unwrap();
        assert!(out.metrics.completed);
        assert_eq!(out.metrics.solver_failures, 0);
        assert_eq!(out.records.len(), 30);
        assert!((out.final_state.q - target).norm() < 1e-2);
    }
}
